//! Config-driven front end for the poisoning laboratory.
//!
//! Every subcommand reads one JSON campaign config and an artifact
//! directory. `campaign` and `sweep` run the whole pipeline in one shot;
//! the remaining subcommands execute single stages against artifacts left
//! by earlier ones, so a pipeline can be resumed or inspected mid-way.
//! Each invocation writes a manifest recording the effective config, input
//! hashes, and the artifacts it produced.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or an unusable config),
//! 2 runtime failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use poisonforge_core::actionspace::{build_item_groups, ItemGroups};
use poisonforge_core::agent::{train_dqn, write_epoch_log_csv, QNetwork};
use poisonforge_core::artifact;
use poisonforge_core::attacks::{
    loki_attack, n_controlled_users, popular_attack, random_attack, AttackKind, InjectedSet,
};
use poisonforge_core::data::{select_targets, Dataset, TargetSpec};
use poisonforge_core::evalharness::{
    evaluate_injection, run_campaign, run_sweep, write_display_rate_csv, write_json,
    write_length_csv, write_sweep_csv, AttackOutcome, CampaignConfig, CampaignReport, StageTiming,
};
use poisonforge_core::influence::{expand_targets, InfluenceEstimator};
use poisonforge_core::parallel;
use poisonforge_core::rng::substream_seed;
use poisonforge_core::simulator::{train_ensemble, Ensemble};

const DATASET_FILE: &str = "dataset.json";
const TARGETS_FILE: &str = "targets.json";
const ENSEMBLE_FILE: &str = "ensemble.json";
const GROUPS_FILE: &str = "groups.json";
const QNET_FILE: &str = "qnet.json";
const EPOCH_LOG_FILE: &str = "epoch_log.csv";
const REPORT_FILE: &str = "report.json";
const RATES_FILE: &str = "display_rates.csv";
const EVALUATION_FILE: &str = "evaluation.json";
const EVALUATION_RATES_FILE: &str = "evaluation_rates.csv";
const SWEEP_FILE: &str = "sweep.json";
const SWEEP_RATES_FILE: &str = "sweep_rates.csv";

fn injections_file(kind: AttackKind) -> String {
    format!("injections_{}.jsonl", kind.name())
}

fn lengths_file(prefix: &str, attack: &str) -> String {
    format!("{prefix}lengths_{attack}.csv")
}

#[derive(Parser)]
#[command(name = "poisonforge", version, about = "Data-poisoning laboratory for next-item recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Campaign config (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound on parallel workers.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for artifacts and manifests.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the clean dataset and select attack targets.
    Ingest(Common),
    /// Train the simulator ensemble on the clean dataset.
    TrainModels(Common),
    /// Factorize the catalog and cluster items into action groups.
    BuildGroups(Common),
    /// Train the attack agent against simulator influence rewards.
    TrainAgent(Common),
    /// Generate injected profiles for every configured attack.
    Attack(Common),
    /// Retrain the target on poisoned data and measure display rates.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Evaluate a single attack, or "none" for the clean control only.
        #[arg(long, value_name = "KIND")]
        attack: Option<String>,
    },
    /// Run the full pipeline end to end.
    Campaign(Common),
    /// Run campaigns across the configured budget grid.
    Sweep(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::TrainModels(_) => "train-models",
            Command::BuildGroups(_) => "build-groups",
            Command::TrainAgent(_) => "train-agent",
            Command::Attack(_) => "attack",
            Command::Evaluate { .. } => "evaluate",
            Command::Campaign(_) => "campaign",
            Command::Sweep(_) => "sweep",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Ingest(c)
            | Command::TrainModels(c)
            | Command::BuildGroups(c)
            | Command::TrainAgent(c)
            | Command::Attack(c)
            | Command::Campaign(c)
            | Command::Sweep(c) => c,
            Command::Evaluate { common, .. } => common,
        }
    }
}

enum CliError {
    /// The invocation itself was unusable; exit 1.
    Usage(String),
    /// A stage failed while executing; exit 2.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> CliError {
        CliError::Runtime(err)
    }
}

impl From<poisonforge_core::error::Error> for CliError {
    fn from(err: poisonforge_core::error::Error) -> CliError {
        CliError::Runtime(err.into())
    }
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let _ = env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("POISONFORGE_LOG", "warn"),
    )
    .try_init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };

    match run(&cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            2
        }
    }
}

fn run(command: &Command) -> Result<(), CliError> {
    let common = command.common();
    if let Some(jobs) = common.jobs {
        parallel::configure_jobs(jobs);
    }
    let cfg = load_config(common)?;
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("creating {}", common.out_dir.display()))
        .map_err(CliError::Runtime)?;

    let mut manifest = RunManifest::new(command.name(), &cfg)?;
    manifest.input(&common.config)?;
    let out = &common.out_dir;

    match command {
        Command::Ingest(_) => cmd_ingest(&cfg, out, &mut manifest)?,
        Command::TrainModels(_) => cmd_train_models(&cfg, out, &mut manifest)?,
        Command::BuildGroups(_) => cmd_build_groups(&cfg, out, &mut manifest)?,
        Command::TrainAgent(_) => cmd_train_agent(&cfg, out, &mut manifest)?,
        Command::Attack(_) => cmd_attack(&cfg, out, &mut manifest)?,
        Command::Evaluate { attack, .. } => {
            let selected = parse_attack_filter(&cfg, attack.as_deref())?;
            cmd_evaluate(&cfg, out, selected, &mut manifest)?;
        }
        Command::Campaign(_) => cmd_campaign(&cfg, out, &mut manifest)?,
        Command::Sweep(_) => cmd_sweep(&cfg, out, &mut manifest)?,
    }

    manifest.write(out)?;
    Ok(())
}

/// Loads and validates the config; any problem here is a usage error. The
/// `--seed` flag replaces the config seed before anything derives from it.
fn load_config(common: &Common) -> Result<CampaignConfig, CliError> {
    if !common.config.is_file() {
        return Err(CliError::Usage(format!(
            "config file not found: {}",
            common.config.display()
        )));
    }
    let mut cfg = CampaignConfig::from_path(&common.config)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", common.config.display())))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn parse_attack_filter(
    cfg: &CampaignConfig,
    flag: Option<&str>,
) -> Result<Vec<AttackKind>, CliError> {
    match flag {
        None => Ok(cfg.attacks.clone()),
        Some("none") => Ok(vec![]),
        Some("random") => Ok(vec![AttackKind::Random]),
        Some("popular") => Ok(vec![AttackKind::Popular]),
        Some("loki") => Ok(vec![AttackKind::Loki]),
        Some(other) => Err(CliError::Usage(format!(
            "unknown attack {other:?}; expected none, random, popular, or loki"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Subcommands. Staged commands use the same named seed substreams as the
// one-shot campaign, so a staged pipeline reproduces `campaign` exactly.

fn cmd_ingest(cfg: &CampaignConfig, out: &Path, manifest: &mut RunManifest) -> anyhow::Result<()> {
    if let Some(raw) = &cfg.data.path {
        manifest.input(raw)?;
    }
    let ds = manifest.timed("data", || Ok(cfg.data.load_dataset(cfg.seed)?))?;
    let targets = manifest.timed("targets", || {
        Ok(select_targets(
            &ds,
            cfg.n_target_items,
            cfg.n_target_users,
            substream_seed(cfg.seed, "targets"),
        )?)
    })?;
    let ds_path = out.join(DATASET_FILE);
    ds.save(&ds_path)?;
    manifest.artifact(&ds_path);
    let targets_path = out.join(TARGETS_FILE);
    artifact::save_json(&targets_path, "targets", 1, &targets)?;
    manifest.artifact(&targets_path);
    println!(
        "ingested {} users x {} items; {} target items, {} target users",
        ds.n_users(),
        ds.n_items(),
        targets.target_items.len(),
        targets.target_users.len()
    );
    Ok(())
}

fn cmd_train_models(
    cfg: &CampaignConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> anyhow::Result<()> {
    let ds = load_dataset(out, manifest)?;
    let ens = manifest.timed("simulator", || {
        Ok(train_ensemble(
            &ds,
            &cfg.simulator,
            &cfg.hyper,
            substream_seed(cfg.seed, "simulator"),
        )?)
    })?;
    let path = out.join(ENSEMBLE_FILE);
    ens.save(&path)?;
    manifest.artifact(&path);
    println!("trained {} simulator member(s)", ens.n_members());
    Ok(())
}

fn cmd_build_groups(
    cfg: &CampaignConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> anyhow::Result<()> {
    let ds = load_dataset(out, manifest)?;
    let targets = load_targets(out, manifest)?;
    let groups = manifest.timed("groups", || {
        Ok(build_item_groups(
            &ds,
            &targets,
            &cfg.action_space,
            substream_seed(cfg.seed, "groups"),
        )?)
    })?;
    let path = out.join(GROUPS_FILE);
    groups.save(&path)?;
    manifest.artifact(&path);
    println!("built {} item groups", groups.n_groups());
    Ok(())
}

fn cmd_train_agent(
    cfg: &CampaignConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> anyhow::Result<()> {
    let ds = load_dataset(out, manifest)?;
    let targets = load_targets(out, manifest)?;
    let ens_path = out.join(ENSEMBLE_FILE);
    manifest.input(&ens_path)?;
    let ens = Ensemble::load(&ens_path)?;
    let groups_path = out.join(GROUPS_FILE);
    manifest.input(&groups_path)?;
    let groups = ItemGroups::load(&groups_path)?;

    let samples = expand_targets(&ds, &targets);
    let estimator = manifest.timed("estimator", || {
        Ok(InfluenceEstimator::build(
            &ens,
            &ds,
            &samples,
            &cfg.lissa,
            substream_seed(cfg.seed, "influence"),
        )?)
    })?;
    let outcome = manifest.timed("agent", || {
        let mut dqn = cfg.dqn.clone();
        dqn.m_actions = cfg.budget.m_actions;
        dqn.seed = substream_seed(cfg.seed, "agent");
        Ok(train_dqn(&estimator, &groups, &dqn)?)
    })?;

    let net_path = out.join(QNET_FILE);
    outcome.net.save(&net_path)?;
    manifest.artifact(&net_path);
    let log_path = out.join(EPOCH_LOG_FILE);
    write_epoch_log_csv(&log_path, &outcome.log)?;
    manifest.artifact(&log_path);
    let last = outcome.log.last();
    println!(
        "trained agent for {} epoch(s); final mean reward {}",
        outcome.log.len(),
        last.map_or(f64::NAN, |l| l.mean_reward)
    );
    Ok(())
}

fn cmd_attack(cfg: &CampaignConfig, out: &Path, manifest: &mut RunManifest) -> anyhow::Result<()> {
    let ds = load_dataset(out, manifest)?;
    let targets = load_targets(out, manifest)?;
    let n_users = n_controlled_users(ds.n_users(), cfg.budget.user_fraction);
    let m = cfg.budget.m_actions;
    let repo = cfg.random_repo_size.unwrap_or(2 * m);

    // the agent artifacts are inputs only when the agent-driven attack runs
    let loki_inputs: Option<(QNetwork, ItemGroups)> = if cfg.attacks.contains(&AttackKind::Loki) {
        let net_path = out.join(QNET_FILE);
        manifest.input(&net_path)?;
        let groups_path = out.join(GROUPS_FILE);
        manifest.input(&groups_path)?;
        Some((QNetwork::load(&net_path)?, ItemGroups::load(&groups_path)?))
    } else {
        None
    };
    for &kind in &cfg.attacks {
        let set = manifest.timed(kind.name(), || {
            Ok(match kind {
                AttackKind::Random => random_attack(
                    &ds,
                    &targets,
                    n_users,
                    m,
                    repo,
                    substream_seed(cfg.seed, "attack-random"),
                )?,
                AttackKind::Popular => popular_attack(&ds, &targets, n_users, m)?,
                AttackKind::Loki => {
                    let (net, groups) = loki_inputs.as_ref().expect("loaded above");
                    loki_attack(net, groups, n_users, m, substream_seed(cfg.seed, "attack-loki"))?
                }
            })
        })?;
        set.validate(m, ds.n_items())?;
        let path = out.join(injections_file(kind));
        set.write_jsonl(&path, &ds)?;
        manifest.artifact(&path);
        println!("{}: {} injected profile(s)", kind.name(), set.users.len());
    }
    Ok(())
}

fn cmd_evaluate(
    cfg: &CampaignConfig,
    out: &Path,
    selected: Vec<AttackKind>,
    manifest: &mut RunManifest,
) -> anyhow::Result<()> {
    let ds = load_dataset(out, manifest)?;
    let targets = load_targets(out, manifest)?;

    let start = Instant::now();
    let control = evaluate_injection(&ds, None, &targets, cfg)?;
    let mut attacks: Vec<AttackOutcome> = Vec::with_capacity(selected.len());
    for &kind in &selected {
        let path = out.join(injections_file(kind));
        manifest.input(&path)?;
        let set = InjectedSet::read_jsonl(&path, &ds, kind)?;
        attacks.push(evaluate_injection(&ds, Some(&set), &targets, cfg)?);
    }
    manifest.step("evaluate", start.elapsed().as_secs_f64());

    let report = CampaignReport {
        seed: cfg.seed,
        target_model: cfg.target_model,
        user_fraction: cfg.budget.user_fraction,
        m_actions: cfg.budget.m_actions,
        top_k: cfg.budget.top_k,
        n_clean_users: ds.n_users(),
        n_items: ds.n_items(),
        control,
        attacks,
        timings: vec![StageTiming {
            stage: "evaluate".into(),
            seconds: start.elapsed().as_secs_f64(),
        }],
    };
    write_report_files(&report, out, EVALUATION_FILE, EVALUATION_RATES_FILE, "evaluation_", manifest)?;
    print_rates(&report);
    Ok(())
}

fn cmd_campaign(
    cfg: &CampaignConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> anyhow::Result<()> {
    if let Some(raw) = &cfg.data.path {
        manifest.input(raw)?;
    }
    let start = Instant::now();
    let report = run_campaign(cfg)?;
    manifest.step("campaign", start.elapsed().as_secs_f64());
    write_report_files(&report, out, REPORT_FILE, RATES_FILE, "", manifest)?;
    print_rates(&report);
    Ok(())
}

fn cmd_sweep(cfg: &CampaignConfig, out: &Path, manifest: &mut RunManifest) -> anyhow::Result<()> {
    if let Some(raw) = &cfg.data.path {
        manifest.input(raw)?;
    }
    let start = Instant::now();
    let sweep = run_sweep(cfg)?;
    manifest.step("sweep", start.elapsed().as_secs_f64());

    let path = out.join(SWEEP_FILE);
    write_json(&sweep, &path)?;
    manifest.artifact(&path);

    let csv_path = out.join(SWEEP_RATES_FILE);
    write_sweep_csv(&sweep, &csv_path)?;
    manifest.artifact(&csv_path);

    println!("swept {} budget point(s)", sweep.points.len());
    for point in &sweep.points {
        for outcome in std::iter::once(&point.report.control).chain(point.report.attacks.iter()) {
            println!(
                "  {:>5.3} users x {:>2} actions  {:>8}  {:.4}",
                point.user_fraction, point.m_actions, outcome.attack, outcome.display_rate
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared plumbing.

fn load_dataset(out: &Path, manifest: &mut RunManifest) -> anyhow::Result<Dataset> {
    let path = out.join(DATASET_FILE);
    manifest.input(&path)?;
    Ok(Dataset::load(&path)?)
}

fn load_targets(out: &Path, manifest: &mut RunManifest) -> anyhow::Result<TargetSpec> {
    let path = out.join(TARGETS_FILE);
    manifest.input(&path)?;
    Ok(artifact::load_json(&path, "targets", 1)?)
}

fn write_report_files(
    report: &CampaignReport,
    out: &Path,
    json_name: &str,
    rates_name: &str,
    lengths_prefix: &str,
    manifest: &mut RunManifest,
) -> anyhow::Result<()> {
    let json_path = out.join(json_name);
    write_json(report, &json_path)?;
    manifest.artifact(&json_path);
    let rates_path = out.join(rates_name);
    write_display_rate_csv(report, &rates_path)?;
    manifest.artifact(&rates_path);
    for outcome in &report.attacks {
        if let Some(lengths) = &outcome.lengths {
            let path = out.join(lengths_file(lengths_prefix, &outcome.attack));
            write_length_csv(lengths, &path)?;
            manifest.artifact(&path);
        }
    }
    Ok(())
}

fn print_rates(report: &CampaignReport) {
    println!(
        "display rates ({} target, {:.1}% users, {} actions, top-{}):",
        report.target_model,
        report.user_fraction * 100.0,
        report.m_actions,
        report.top_k
    );
    for outcome in std::iter::once(&report.control).chain(report.attacks.iter()) {
        println!(
            "  {:>8}  {:.4}  (per seed: {})",
            outcome.attack,
            outcome.display_rate,
            outcome
                .per_seed
                .iter()
                .map(|r| format!("{r:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
}

#[derive(Serialize)]
struct HashedInput {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct ManifestStep {
    step: String,
    seconds: f64,
}

/// Provenance record for one invocation: the effective config, hashes of
/// everything read, and every artifact written. Artifact names never overlap
/// across subcommands, so each file in an output directory traces back to
/// exactly one manifest.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    created_unix_ms: u128,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<HashedInput>,
    artifacts: Vec<String>,
    timings: Vec<ManifestStep>,
}

impl RunManifest {
    fn new(command: &str, cfg: &CampaignConfig) -> anyhow::Result<RunManifest> {
        Ok(RunManifest {
            command: command.to_string(),
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_millis()),
            seed: cfg.seed,
            config: serde_json::to_value(cfg)?,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        })
    }

    /// Records a consumed file with its content hash.
    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading input {}", path.display()))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(HashedInput {
            path: path.display().to_string(),
            sha256: hex,
        });
        Ok(())
    }

    fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    fn step(&mut self, name: &str, seconds: f64) {
        self.timings.push(ManifestStep {
            step: name.to_string(),
            seconds,
        });
    }

    fn timed<T>(
        &mut self,
        name: &str,
        f: impl FnOnce() -> anyhow::Result<T>,
    ) -> anyhow::Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.step(name, start.elapsed().as_secs_f64());
        Ok(out)
    }

    fn write(&self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
