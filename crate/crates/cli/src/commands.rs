//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use framepick::eval::{compare, emit_report, CompareOptions, ComparisonReport, ReportFormat};
use framepick::policies::Policy;
use framepick::qnet::{gradient_survey, load_params, save_params, QNetworkParams};
use framepick::reward::{GoalVariant, StatsCache};
use framepick::sim::suite::{generate_suite, load_suite, write_suite, SuiteParams};
use framepick::sim::ObservationMode;
use framepick::trainer::{episode_stats, train_with, TrainConfig};
use serde_json::Value;

use crate::server::{self, AppState};

/// Largest relative gradient error `grad-check` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub enum Failure {
    /// Bad invocation; exit code 1.
    Usage(String),
    /// The command ran and failed; exit code 2.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<framepick::Error> for Failure {
    fn from(e: framepick::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "framepick", version, about = "Frame recommendation for interactive segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an episode suite from generator parameters and a seed.
    Gen(GenArgs),
    /// Precompute random-policy statistics for every suite episode.
    Stats(StatsArgs),
    /// Train an agent and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint against the baselines.
    Eval(ReportArgs),
    /// Compare any set of policies on a suite.
    Compare(ReportArgs),
    /// Check analytic gradients against finite differences.
    GradCheck(GradCheckArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of episodes.
    #[arg(long, env = "FRAMEPICK_N")]
    pub n: Option<usize>,
    #[arg(long, env = "FRAMEPICK_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "FRAMEPICK_OUT")]
    pub out: PathBuf,
    /// JSON file with generator parameters.
    #[arg(long, env = "FRAMEPICK_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub min_segments: Option<usize>,
    #[arg(long)]
    pub max_segments: Option<usize>,
    #[arg(long)]
    pub horizon: Option<u32>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, env = "FRAMEPICK_SUITE")]
    pub suite: PathBuf,
    #[arg(long, env = "FRAMEPICK_OUT")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    #[arg(long, env = "FRAMEPICK_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Largest horizon to cover; defaults to each episode's own.
    #[arg(long)]
    pub horizon: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "FRAMEPICK_SUITE")]
    pub suite: PathBuf,
    /// Checkpoint to write.
    #[arg(long, env = "FRAMEPICK_OUT")]
    pub out: PathBuf,
    /// Per-episode training log (JSON lines).
    #[arg(long, env = "FRAMEPICK_LOG")]
    pub log: Option<PathBuf>,
    /// JSON file with training settings, using TrainConfig field names.
    #[arg(long, env = "FRAMEPICK_CONFIG")]
    pub config: Option<PathBuf>,
    /// Start from the desk-scale preset instead of the defaults.
    #[arg(long)]
    pub desk: bool,
    #[arg(long, env = "FRAMEPICK_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "FRAMEPICK_EPISODES")]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, env = "FRAMEPICK_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subseq_len: Option<usize>,
    #[arg(long)]
    pub t_train: Option<u32>,
    #[arg(long, value_parser = parse_goal)]
    pub goal_variant: Option<GoalVariant>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ObservationMode>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Train without task decomposition.
    #[arg(long)]
    pub no_decomposition: bool,
    /// Print progress every this many episodes.
    #[arg(long, default_value_t = 100)]
    pub progress_every: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, env = "FRAMEPICK_SUITE")]
    pub suite: PathBuf,
    /// Agent checkpoint; required when `agent` is among the policies.
    #[arg(long, env = "FRAMEPICK_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated policy names (agent, random, linspace, worst-oracle, worst-wild).
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    #[arg(long, env = "FRAMEPICK_MODE", value_parser = parse_mode, default_value = "oracle")]
    pub mode: ObservationMode,
    /// Rounds per episode; defaults to 8.
    #[arg(long)]
    pub horizon: Option<u32>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10_000)]
    pub resamples: usize,
    #[arg(long, env = "FRAMEPICK_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_format, default_value = "json")]
    pub format: ReportFormat,
    /// Report file; only the summary table is printed when omitted.
    #[arg(long, env = "FRAMEPICK_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    #[arg(long, env = "FRAMEPICK_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "FRAMEPICK_SUITE")]
    pub suite: PathBuf,
    #[arg(long, env = "FRAMEPICK_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "FRAMEPICK_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Completed sessions are appended here as JSON lines.
    #[arg(long, env = "FRAMEPICK_SESSION_LOG")]
    pub session_log: Option<PathBuf>,
    /// Directory of static files served under `/`.
    #[arg(long, env = "FRAMEPICK_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<ObservationMode, String> {
    s.parse().map_err(|e: framepick::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: framepick::Error| e.to_string())
}

fn parse_goal(s: &str) -> Result<GoalVariant, String> {
    match s {
        "naive" => Ok(GoalVariant::Naive),
        "final" => Ok(GoalVariant::Final),
        other => Err(format!("unknown goal variant {other:?} (naive, final)")),
    }
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => report(a, true),
        Command::Compare(a) => report(a, false),
        Command::GradCheck(a) => grad_check(a),
        Command::Serve(a) => serve(a),
    }
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !value.is_object() {
        return Err(usage(format!("config {} must be a JSON object", path.display())));
    }
    Ok(value)
}

/// Lays the keys of a config file over `base`, so the file overrides the
/// built-in values and anything it omits keeps them.
fn layered<T>(base: &T, file: Option<&Path>) -> Result<T, Failure>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(base).map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(path) = file {
        let Value::Object(overrides) = read_json(path)? else {
            unreachable!("read_json returns objects")
        };
        let obj = value.as_object_mut().expect("structs serialize to objects");
        for (k, v) in overrides {
            if !obj.contains_key(&k) {
                return Err(usage(format!("unknown field {k:?} in {}", path.display())));
            }
            obj.insert(k, v);
        }
    }
    serde_json::from_value(value).map_err(|e| usage(format!("invalid config: {e}")))
}

fn open_suite(path: &Path) -> Result<(Vec<framepick::episode::EpisodeConfig>, u64), Failure> {
    if !path.exists() {
        return Err(usage(format!("suite {} does not exist", path.display())));
    }
    Ok(load_suite(path)?)
}

fn gen(a: GenArgs) -> CmdResult {
    let mut params: SuiteParams = layered(&SuiteParams::default(), a.config.as_deref())?;
    if let Some(n) = a.n {
        params.n_episodes = n;
    }
    if let Some(v) = a.min_frames {
        params.min_frames = v;
    }
    if let Some(v) = a.max_frames {
        params.max_frames = v;
    }
    if let Some(v) = a.min_segments {
        params.min_segments = v;
    }
    if let Some(v) = a.max_segments {
        params.max_segments = v;
    }
    if let Some(v) = a.horizon {
        params.horizon = v;
    }
    let suite = generate_suite(&params, a.seed).map_err(|e| usage(e.to_string()))?;
    let hash = write_suite(&a.out, &suite)?;
    println!("wrote {} episodes to {} (hash {hash:016x})", suite.len(), a.out.display());
    Ok(())
}

fn stats(a: StatsArgs) -> CmdResult {
    let (suite, _) = open_suite(&a.suite)?;
    let mut cache = if a.out.exists() {
        StatsCache::load(&a.out)?
    } else {
        StatsCache::default()
    };
    for config in &suite {
        let mut c = config.clone();
        if let Some(h) = a.horizon {
            c.horizon = h;
        }
        let per_horizon = episode_stats(&c, a.runs, a.seed)?;
        for s in per_horizon.into_values() {
            cache.insert(config.content_hash(), a.seed, s);
        }
    }
    cache.save(&a.out)?;
    println!("{} entries in {}", cache.len(), a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let base = if a.desk {
        TrainConfig::desk()
    } else {
        TrainConfig::default()
    };
    let mut cfg = layered(&base, a.config.as_deref())?;
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.subseq_len {
        cfg.subseq_len = v;
    }
    if let Some(v) = a.t_train {
        cfg.t_train = v;
    }
    if let Some(v) = a.goal_variant {
        cfg.goal_variant = v;
    }
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_every = v;
    }
    if a.no_decomposition {
        cfg.decomposition = false;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let cfg = train_config(&a)?;
    let (suite, _) = open_suite(&a.suite)?;
    let every = a.progress_every.max(1);
    let (params, log) = train_with(&cfg, &suite, |e| {
        if (e.episode + 1) % every == 0 || e.eval_auc.is_some() {
            let eval = e.eval_auc.map(|v| format!(" eval_auc {v:.4}")).unwrap_or_default();
            eprintln!(
                "episode {} eps {:.3} loss {:.5} goal {:.3}{eval}",
                e.episode + 1,
                e.epsilon,
                e.mean_loss,
                e.mean_goal_reward
            );
        }
    })?;
    save_params(&params, &a.out)?;
    if let Some(path) = &a.log {
        log.write_jsonl(path)?;
    }
    println!("wrote checkpoint {}", a.out.display());
    Ok(())
}

const EVAL_POLICIES: [&str; 5] = ["agent", "worst-oracle", "worst-wild", "linspace", "random"];

fn build_policies(
    names: &[String],
    checkpoint: Option<&Path>,
    seed: u64,
) -> Result<Vec<(String, Policy)>, Failure> {
    let mut agent: Option<Arc<QNetworkParams>> = None;
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let policy = Policy::from_name(name, seed).map_err(|e| usage(e.to_string()))?;
        let policy = match policy {
            Policy::Human => return Err(usage("the human policy is only available through `serve`")),
            Policy::Agent(_) => {
                let path = checkpoint
                    .ok_or_else(|| usage("policy `agent` needs --checkpoint <FILE>"))?;
                if agent.is_none() {
                    agent = Some(Arc::new(load_params(path)?));
                }
                Policy::Agent(agent.clone())
            }
            p => p,
        };
        out.push((name.clone(), policy));
    }
    Ok(out)
}

fn print_report(r: &ComparisonReport) {
    println!(
        "{} episodes, mode {:?}, horizon {}",
        r.n_episodes, r.mode, r.horizon
    );
    println!("{:<14} {:>8} {:>8} {:>8}", "policy", "auc", "std", "repeats");
    for p in &r.policies {
        let std = p.std_auc.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<14} {:>8.4} {:>8} {:>8}", p.name, p.mean_auc, std, p.repeats);
    }
    for w in &r.pairwise {
        println!(
            "{} vs {}: wins {:.2} [{:.2}, {:.2}]",
            w.a, w.b, w.win_fraction, w.ci_low, w.ci_high
        );
    }
}

fn report(a: ReportArgs, agent_required: bool) -> CmdResult {
    let names: Vec<String> = match &a.policies {
        Some(p) => p.iter().map(|s| s.trim().to_string()).collect(),
        None if agent_required || a.checkpoint.is_some() => {
            EVAL_POLICIES.iter().map(|s| s.to_string()).collect()
        }
        None => EVAL_POLICIES[1..].iter().map(|s| s.to_string()).collect(),
    };
    if agent_required && !names.iter().any(|n| n == "agent") {
        return Err(usage("eval scores a checkpoint; include `agent` in --policies"));
    }
    if a.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let policies = build_policies(&names, a.checkpoint.as_deref(), a.seed)?;
    let (suite, hash) = open_suite(&a.suite)?;
    let options = CompareOptions {
        mode: a.mode,
        horizon: Some(a.horizon.unwrap_or(8)),
        random_repeats: a.repeats,
        bootstrap_resamples: a.resamples,
        seed: a.seed,
    };
    let mut r = compare(&suite, &policies, &options)?;
    r.suite_hash = Some(format!("{hash:016x}"));
    print_report(&r);
    if let Some(out) = &a.out {
        emit_report(&r, a.format, out)?;
    }
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> CmdResult {
    if a.draws == 0 {
        return Err(usage("--draws must be at least 1"));
    }
    let s = gradient_survey(a.draws, a.seed)?;
    println!(
        "max relative error {:.3e} over {} draws ({} coordinates)",
        s.max_rel_err, s.draws, s.checked
    );
    if s.max_rel_err > GRAD_TOLERANCE {
        return Err(Failure::Runtime(format!(
            "gradient check failed: {:.3e} > {GRAD_TOLERANCE:e}",
            s.max_rel_err
        )));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CmdResult {
    let (suite, _) = open_suite(&a.suite)?;
    let agent = a.checkpoint.as_deref().map(load_params).transpose()?;
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(usage(format!("{} is not a directory", dir.display())));
        }
    }
    let state = Arc::new(AppState::new(suite, agent, a.session_log));
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(server::serve(&a.addr, state, a.static_dir))
        .map_err(|e| Failure::Runtime(format!("server on {}: {e}", a.addr)))
}
