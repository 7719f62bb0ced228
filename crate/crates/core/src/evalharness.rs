//! End-to-end campaign runner: poison, retrain, rank, and measure.
//!
//! A campaign trains the attacker-side stack (simulator ensemble, item
//! groups, agent) on clean data, generates each configured attack's injected
//! profiles, and then measures their effect on a separately seeded target
//! model retrained from scratch — the target never participates in the
//! attacker's feedback loop. Display rates are averaged over several retrain
//! seeds to damp SGD noise, with per-seed values kept in the report.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::actionspace::{build_item_groups, ActionSpaceConfig};
use crate::agent::{train_dqn, DqnConfig};
use crate::attacks::{
    loki_attack, n_controlled_users, popular_attack, random_attack, AttackKind, InjectedSet,
};
use crate::data::{
    build_dataset, ingest, select_targets, Dataset, LogFormat, TargetSpec,
};
use crate::error::{Error, Result};
use crate::influence::{expand_targets, InfluenceEstimator, LissaConfig};
use crate::recmodels::{top_k, AnyModel, ModelHyper, ModelKind, RecModel};
use crate::rng::substream_seed;
use crate::simulator::{train_ensemble, MemberSpec};
use crate::synth::{self, SynthSpec};

/// Attacker resources and the evaluation list size.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// Controlled users as a fraction of the clean user count.
    #[serde(default = "default_user_fraction")]
    pub user_fraction: f64,
    /// Interactions each controlled user may perform.
    #[serde(default = "default_m_actions")]
    pub m_actions: usize,
    /// Recommendation list size used for display rate.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_user_fraction() -> f64 {
    0.03
}
fn default_m_actions() -> usize {
    15
}
fn default_top_k() -> usize {
    10
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            user_fraction: default_user_fraction(),
            m_actions: default_m_actions(),
            top_k: default_top_k(),
        }
    }
}

/// Where the interaction log comes from: an on-disk file or the built-in
/// generator. In JSON both fields default to absent, so a config must name
/// its source explicitly; the Rust-side `Default` picks the generator for
/// hermetic runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: LogFormat,
    #[serde(default = "default_min_activities")]
    pub min_user_activities: usize,
    #[serde(default = "default_min_activities")]
    pub min_item_activities: usize,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

fn default_format() -> LogFormat {
    LogFormat::Csv
}
fn default_min_activities() -> usize {
    5
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            format: default_format(),
            min_user_activities: default_min_activities(),
            min_item_activities: default_min_activities(),
            synth: Some(SynthSpec::default()),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.synth) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "data config names both a path and a generator; pick one".into(),
            )),
            (None, None) => Err(Error::InvalidConfig(
                "data config must name a source: either `path` or `synth`".into(),
            )),
            (None, Some(spec)) => spec.validate(),
            (Some(_), None) => Ok(()),
        }
    }

    /// Ingests or generates the clean dataset.
    pub fn load_dataset(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        if let Some(spec) = &self.synth {
            synth::generate(spec, substream_seed(seed, "synth"))
        } else {
            let log = ingest(self.path.as_ref().expect("validated above"), self.format)?;
            build_dataset(&log, self.min_user_activities, self.min_item_activities)
        }
    }
}

/// Budget grids for `run_sweep`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_fractions")]
    pub user_fractions: Vec<f64>,
    #[serde(default = "default_sweep_actions")]
    pub m_actions: Vec<usize>,
}

fn default_sweep_fractions() -> Vec<f64> {
    vec![0.01, 0.02, 0.03]
}
fn default_sweep_actions() -> Vec<usize> {
    vec![5, 10, 15]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            user_fractions: default_sweep_fractions(),
            m_actions: default_sweep_actions(),
        }
    }
}

/// Everything one campaign needs. A single master seed drives every stage
/// through named substreams; the agent and action-space seeds are derived
/// from it, so per-stage seed fields in the nested configs are ignored here.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub data: DataConfig,
    /// The held-out family being attacked; retrained from scratch during
    /// evaluation and never queried while the agent learns.
    #[serde(default = "default_target_model")]
    pub target_model: ModelKind,
    /// Attacker-local ensemble members. May include the target family — the
    /// instances are still separately seeded.
    #[serde(default = "default_simulator")]
    pub simulator: Vec<MemberSpec>,
    #[serde(default)]
    pub hyper: ModelHyper,
    #[serde(default = "default_n_targets")]
    pub n_target_items: usize,
    #[serde(default = "default_n_targets")]
    pub n_target_users: usize,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackKind>,
    /// Independent target retrains averaged into each display rate.
    #[serde(default = "default_retrain_seeds")]
    pub retrain_seeds: usize,
    #[serde(default)]
    pub lissa: LissaConfig,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub action_space: ActionSpaceConfig,
    /// Item repository size for the random attack; `None` means twice the
    /// action budget.
    #[serde(default)]
    pub random_repo_size: Option<usize>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_seed() -> u64 {
    7
}
fn default_target_model() -> ModelKind {
    ModelKind::Bprmf
}
fn default_simulator() -> Vec<MemberSpec> {
    vec![
        MemberSpec {
            kind: ModelKind::Bprmf,
            weight: 1.0,
            hyper: None,
        },
        MemberSpec {
            kind: ModelKind::Fpmc,
            weight: 1.0,
            hyper: None,
        },
    ]
}
fn default_n_targets() -> usize {
    20
}
fn default_attacks() -> Vec<AttackKind> {
    vec![AttackKind::Random, AttackKind::Popular, AttackKind::Loki]
}
fn default_retrain_seeds() -> usize {
    3
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            seed: default_seed(),
            data: DataConfig::default(),
            target_model: default_target_model(),
            simulator: default_simulator(),
            hyper: ModelHyper::default(),
            n_target_items: default_n_targets(),
            n_target_users: default_n_targets(),
            budget: BudgetConfig::default(),
            attacks: default_attacks(),
            retrain_seeds: default_retrain_seeds(),
            lissa: LissaConfig::default(),
            dqn: DqnConfig::default(),
            action_space: ActionSpaceConfig::default(),
            random_repo_size: None,
            sweep: None,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if !(self.budget.user_fraction > 0.0 && self.budget.user_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "user_fraction must be in (0, 1], got {}",
                self.budget.user_fraction
            )));
        }
        if self.budget.m_actions == 0 || self.budget.top_k == 0 {
            return Err(Error::InvalidConfig(
                "m_actions and top_k must be >= 1".into(),
            ));
        }
        // Injected profiles bypass activity filtering, so they must clear the
        // threshold on their own or the poisoned dataset would contradict the
        // filter it claims to have applied.
        if self.budget.m_actions < self.data.min_user_activities {
            return Err(Error::InvalidConfig(format!(
                "m_actions = {} is below the dataset's activity floor of {}; \
                 injected profiles are never re-filtered",
                self.budget.m_actions, self.data.min_user_activities
            )));
        }
        if self.retrain_seeds == 0 {
            return Err(Error::InvalidConfig("retrain_seeds must be >= 1".into()));
        }
        if let Some(repo) = self.random_repo_size {
            if repo == 0 {
                return Err(Error::InvalidConfig("random_repo_size must be >= 1".into()));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.user_fractions.is_empty() || sweep.m_actions.is_empty() {
                return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
            }
        }
        self.lissa.validate()?;
        self.dqn.validate()?;
        self.action_space.validate()?;
        Ok(())
    }

    /// Loads a config from a JSON file.
    pub fn from_path(path: &Path) -> Result<CampaignConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: CampaignConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn repo_size(&self) -> usize {
        self.random_repo_size.unwrap_or(2 * self.budget.m_actions)
    }
}

/// Display rates for one attack (or the no-attack control, named "none").
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attack: String,
    /// Mean over retrain seeds.
    pub display_rate: f64,
    pub per_seed: Vec<f64>,
    pub n_injected_users: usize,
    /// Length histograms before/after injection; absent for the control.
    pub lengths: Option<LengthReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// What one campaign measured.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignReport {
    pub seed: u64,
    pub target_model: ModelKind,
    pub user_fraction: f64,
    pub m_actions: usize,
    pub top_k: usize,
    pub n_clean_users: usize,
    pub n_items: usize,
    pub control: AttackOutcome,
    pub attacks: Vec<AttackOutcome>,
    pub timings: Vec<StageTiming>,
}

/// Sequence-length histograms over a shared exact-length binning, with the
/// total-variation distance between their normalized forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    /// Sorted union of lengths observed in either dataset.
    pub lengths: Vec<usize>,
    pub before: Vec<usize>,
    pub after: Vec<usize>,
    pub tv_distance: f64,
}

/// Grafts injected profiles onto a dataset as train-only users; the original
/// users, splits, and catalog are untouched. No activity re-filtering happens
/// here — the config check on `m_actions` guarantees injected profiles would
/// have survived it.
pub fn inject(ds: &Dataset, set: &InjectedSet) -> Result<Dataset> {
    let mut out = ds.clone();
    for user in &set.users {
        out.push_train_only_user(user.tag.clone(), user.items.clone())?;
    }
    Ok(out)
}

/// Fraction of target users whose top-K list (over their train history)
/// contains at least one target item.
pub fn display_rate<M: RecModel>(
    model: &M,
    ds: &Dataset,
    targets: &TargetSpec,
    k: usize,
) -> f64 {
    if targets.target_users.is_empty() {
        return 0.0;
    }
    let wanted: HashSet<usize> = targets.target_items.iter().copied().collect();
    let hits = targets
        .target_users
        .iter()
        .filter(|&&u| {
            top_k(model, u, ds.train(u), k, true)
                .items
                .iter()
                .any(|i| wanted.contains(i))
        })
        .count();
    hits as f64 / targets.target_users.len() as f64
}

/// Compares full-sequence length distributions under one shared binning.
pub fn length_distribution_report(before: &Dataset, after: &Dataset) -> LengthReport {
    let count = |ds: &Dataset| -> BTreeMap<usize, usize> {
        let mut map = BTreeMap::new();
        for u in 0..ds.n_users() {
            *map.entry(ds.sequence(u).len()).or_insert(0) += 1;
        }
        map
    };
    let b = count(before);
    let a = count(after);
    let mut lengths: Vec<usize> = b.keys().chain(a.keys()).copied().collect();
    lengths.sort_unstable();
    lengths.dedup();
    let nb = before.n_users() as f64;
    let na = after.n_users() as f64;
    let mut before_counts = Vec::with_capacity(lengths.len());
    let mut after_counts = Vec::with_capacity(lengths.len());
    let mut tv = 0.0;
    for &len in &lengths {
        let cb = b.get(&len).copied().unwrap_or(0);
        let ca = a.get(&len).copied().unwrap_or(0);
        before_counts.push(cb);
        after_counts.push(ca);
        tv += (cb as f64 / nb - ca as f64 / na).abs();
    }
    LengthReport {
        lengths,
        before: before_counts,
        after: after_counts,
        tv_distance: 0.5 * tv,
    }
}

/// Retrains the configured target family from scratch on `ds` once per
/// retrain seed and reports the per-seed and mean display rates. The retrain
/// seeds depend only on the seed index, so the control and every attack see
/// identical target initializations — differences isolate the injected data.
pub fn evaluate_injection(
    clean: &Dataset,
    set: Option<&InjectedSet>,
    targets: &TargetSpec,
    cfg: &CampaignConfig,
) -> Result<AttackOutcome> {
    let (label, ds, injected, lengths) = match set {
        None => (String::from("none"), clean.clone(), 0, None),
        Some(set) => {
            let poisoned = inject(clean, set)?;
            let report = length_distribution_report(clean, &poisoned);
            (set.attack.name().to_string(), poisoned, set.users.len(), Some(report))
        }
    };
    let mut per_seed = Vec::with_capacity(cfg.retrain_seeds);
    for r in 0..cfg.retrain_seeds {
        let seed = substream_seed(cfg.seed, &format!("retrain.{r}"));
        let model = AnyModel::train(cfg.target_model, &ds, &cfg.hyper, seed)?;
        per_seed.push(display_rate(&model, &ds, targets, cfg.budget.top_k));
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    Ok(AttackOutcome {
        attack: label,
        display_rate: mean,
        per_seed,
        n_injected_users: injected,
        lengths,
    })
}

fn stage<T>(
    name: &'static str,
    timings: &mut Vec<StageTiming>,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(name))?;
    timings.push(StageTiming {
        stage: name.to_string(),
        seconds: start.elapsed().as_secs_f64(),
    });
    log::info!("stage {name} finished in {:.2}s", start.elapsed().as_secs_f64());
    Ok(out)
}

/// Runs one full campaign. The attacker-side stages (simulator, groups,
/// estimator, agent) run only when the attack list needs them; every stage
/// draws from its own named substream of the master seed, so skipping stages
/// never shifts another stage's randomness.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport> {
    cfg.validate()?;
    let mut timings = Vec::new();

    let ds = stage("data", &mut timings, || cfg.data.load_dataset(cfg.seed))?;
    let targets = stage("targets", &mut timings, || {
        select_targets(
            &ds,
            cfg.n_target_items,
            cfg.n_target_users,
            substream_seed(cfg.seed, "targets"),
        )
    })?;

    let n_users = n_controlled_users(ds.n_users(), cfg.budget.user_fraction);
    let m = cfg.budget.m_actions;

    // The attacker's learning stack is only needed for the agent-driven attack.
    let trained_net = if cfg.attacks.contains(&AttackKind::Loki) {
        let ens = stage("simulator", &mut timings, || {
            train_ensemble(&ds, &cfg.simulator, &cfg.hyper, substream_seed(cfg.seed, "simulator"))
        })?;
        let groups = stage("groups", &mut timings, || {
            build_item_groups(&ds, &targets, &cfg.action_space, substream_seed(cfg.seed, "groups"))
        })?;
        let samples = expand_targets(&ds, &targets);
        let estimator = stage("estimator", &mut timings, || {
            InfluenceEstimator::build(&ens, &ds, &samples, &cfg.lissa, substream_seed(cfg.seed, "influence"))
        })?;
        let outcome = stage("agent", &mut timings, || {
            let mut dqn = cfg.dqn.clone();
            dqn.m_actions = m;
            dqn.seed = substream_seed(cfg.seed, "agent");
            train_dqn(&estimator, &groups, &dqn)
        })?;
        Some((outcome.net, groups))
    } else {
        None
    };

    let sets = stage("attacks", &mut timings, || {
        let mut sets = Vec::with_capacity(cfg.attacks.len());
        for kind in &cfg.attacks {
            let set = match kind {
                AttackKind::Random => random_attack(
                    &ds,
                    &targets,
                    n_users,
                    m,
                    cfg.repo_size(),
                    substream_seed(cfg.seed, "attack-random"),
                )?,
                AttackKind::Popular => popular_attack(&ds, &targets, n_users, m)?,
                AttackKind::Loki => {
                    let (net, groups) =
                        trained_net.as_ref().expect("agent trained when loki is listed");
                    loki_attack(net, groups, n_users, m, substream_seed(cfg.seed, "attack-loki"))?
                }
            };
            set.validate(m, ds.n_items())?;
            sets.push(set);
        }
        Ok(sets)
    })?;

    let (control, attacks) = stage("evaluate", &mut timings, || {
        let control = evaluate_injection(&ds, None, &targets, cfg)?;
        let mut attacks = Vec::with_capacity(sets.len());
        for set in &sets {
            attacks.push(evaluate_injection(&ds, Some(set), &targets, cfg)?);
        }
        Ok((control, attacks))
    })?;

    Ok(CampaignReport {
        seed: cfg.seed,
        target_model: cfg.target_model,
        user_fraction: cfg.budget.user_fraction,
        m_actions: m,
        top_k: cfg.budget.top_k,
        n_clean_users: ds.n_users(),
        n_items: ds.n_items(),
        control,
        attacks,
        timings,
    })
}

/// One campaign at one point of the budget grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub user_fraction: f64,
    pub m_actions: usize,
    pub report: CampaignReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

/// Runs a campaign per grid point, in parallel; each point reuses the same
/// master seed, so a point's report matches a standalone campaign with that
/// budget.
pub fn run_sweep(cfg: &CampaignConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let sweep = cfg.sweep.clone().unwrap_or_default();
    let mut grid = Vec::new();
    for &fraction in &sweep.user_fractions {
        for &m in &sweep.m_actions {
            grid.push((fraction, m));
        }
    }
    let results = crate::parallel::map_collect(&grid, |&(fraction, m)| {
        let mut point = cfg.clone();
        point.budget.user_fraction = fraction;
        point.budget.m_actions = m;
        point.sweep = None;
        run_campaign(&point).map(|report| SweepPoint {
            user_fraction: fraction,
            m_actions: m,
            report,
        })
    });
    let points = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { points })
}

/// Writes any serializable report as pretty JSON (an export, not a
/// reloadable artifact).
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Display rates as CSV: one row per (attack, seed) plus the mean rows.
pub fn write_display_rate_csv(report: &CampaignReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    w.write_record(["attack", "seed", "display_rate"])
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    for outcome in std::iter::once(&report.control).chain(report.attacks.iter()) {
        for (r, rate) in outcome.per_seed.iter().enumerate() {
            w.write_record([outcome.attack.as_str(), &r.to_string(), &rate.to_string()])
                .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
        }
        w.write_record([outcome.attack.as_str(), "mean", &outcome.display_rate.to_string()])
            .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Sweep results as CSV: one row per (budget point, attack).
pub fn write_sweep_csv(sweep: &SweepReport, path: &Path) -> Result<()> {
    let wrap = |e: csv::Error| Error::io(path.display().to_string(), std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(["user_fraction", "m_actions", "attack", "display_rate"])
        .map_err(wrap)?;
    for point in &sweep.points {
        for outcome in std::iter::once(&point.report.control).chain(point.report.attacks.iter()) {
            w.write_record([
                point.user_fraction.to_string(),
                point.m_actions.to_string(),
                outcome.attack.clone(),
                outcome.display_rate.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Length histograms as CSV, one row per bin.
pub fn write_length_csv(report: &LengthReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    w.write_record(["length", "before", "after"])
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    for (i, len) in report.lengths.iter().enumerate() {
        w.write_record([
            len.to_string(),
            report.before[i].to_string(),
            report.after[i].to_string(),
        ])
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::InjectedUser;
    use crate::diag::FixedScoreModel;

    fn spec(items: Vec<usize>, users: Vec<usize>) -> TargetSpec {
        TargetSpec {
            target_items: items,
            target_users: users,
        }
    }

    /// Thirty-item catalog, twenty users, train history [1] each.
    fn flat_dataset() -> Dataset {
        Dataset::synthetic(vec![vec![1, 2, 3]; 20], 30).unwrap()
    }

    #[test]
    fn injecting_nothing_leaves_the_dataset_unchanged() {
        let ds = flat_dataset();
        let empty = InjectedSet {
            attack: AttackKind::Random,
            users: vec![],
        };
        assert_eq!(inject(&ds, &empty).unwrap(), ds);
    }

    #[test]
    fn injection_appends_train_only_users_and_nothing_else() {
        let ds = flat_dataset();
        let set = InjectedSet {
            attack: AttackKind::Popular,
            users: vec![
                InjectedUser {
                    tag: "inj:popular:0".into(),
                    items: vec![4, 5, 6, 7, 8],
                    provenance: AttackKind::Popular,
                },
                InjectedUser {
                    tag: "inj:popular:1".into(),
                    items: vec![9, 10, 11, 12, 13],
                    provenance: AttackKind::Popular,
                },
            ],
        };
        let poisoned = inject(&ds, &set).unwrap();
        assert_eq!(poisoned.n_users(), ds.n_users() + 2);
        assert_eq!(poisoned.n_items(), ds.n_items());
        // originals untouched, injected profiles carry train data only
        for u in 0..ds.n_users() {
            assert_eq!(poisoned.sequence(u), ds.sequence(u));
            assert_eq!(poisoned.split(u), ds.split(u));
        }
        for u in ds.n_users()..poisoned.n_users() {
            assert!(poisoned.is_train_only(u));
            assert_eq!(poisoned.train(u).len(), 5);
            assert_eq!(poisoned.val_item(u), None);
            assert_eq!(poisoned.test_item(u), None);
        }
        assert_eq!(
            poisoned.total_train_events(),
            ds.total_train_events() + 10
        );
        poisoned.validate().unwrap();
    }

    /// Scores: users 0..3 rank item 25 first, everyone else buries it.
    fn three_hit_model() -> FixedScoreModel {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|u| {
                let mut row = vec![0.0; 30];
                row[25] = if u < 3 { 10.0 } else { -10.0 };
                row
            })
            .collect();
        FixedScoreModel::from_rows(rows)
    }

    #[test]
    fn display_rate_counts_hit_fractions() {
        let ds = flat_dataset();
        let targets = spec(vec![25], (0..20).collect());
        let rate = display_rate(&three_hit_model(), &ds, &targets, 10);
        assert_eq!(rate, 0.15);
    }

    #[test]
    fn display_rate_saturates_at_catalog_size() {
        let ds = flat_dataset();
        let targets = spec(vec![25], (0..20).collect());
        let rate = display_rate(&three_hit_model(), &ds, &targets, 30);
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn display_rate_is_monotone_in_k() {
        use rand::Rng;
        let ds = flat_dataset();
        let mut rng = crate::rng::substream(99, "display-monotone");
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..30).map(|_| rng.random::<f64>()).collect())
            .collect();
        let model = FixedScoreModel::from_rows(rows);
        let targets = spec(vec![7, 25], (0..20).collect());
        let mut prev = 0.0;
        for k in 1..=30 {
            let rate = display_rate(&model, &ds, &targets, k);
            assert!(rate >= prev, "rate dropped from {prev} to {rate} at k={k}");
            prev = rate;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn identical_datasets_have_zero_length_distance() {
        let ds = flat_dataset();
        let report = length_distribution_report(&ds, &ds);
        assert_eq!(report.before, report.after);
        assert_eq!(report.tv_distance, 0.0);
    }

    #[test]
    fn length_report_matches_a_hand_computed_distance() {
        let before =
            Dataset::synthetic(vec![vec![0, 1, 2], vec![2, 1, 0], vec![0, 1, 2, 3]], 4).unwrap();
        let mut after = before.clone();
        after.push_train_only_user("inj:x:0".into(), vec![3, 2, 1]).unwrap();
        let report = length_distribution_report(&before, &after);
        assert_eq!(report.lengths, vec![3, 4]);
        assert_eq!(report.before, vec![2, 1]);
        assert_eq!(report.after, vec![3, 1]);
        // 0.5 * (|2/3 - 3/4| + |1/3 - 1/4|) = 1/12
        assert!((report.tv_distance - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn new_length_bins_come_only_from_the_injected_cohort() {
        let ds = flat_dataset();
        let set = InjectedSet {
            attack: AttackKind::Random,
            users: vec![InjectedUser {
                tag: "inj:random:0".into(),
                items: vec![0, 1, 2, 3, 4],
                provenance: AttackKind::Random,
            }],
        };
        let poisoned = inject(&ds, &set).unwrap();
        let report = length_distribution_report(&ds, &poisoned);
        for (i, &len) in report.lengths.iter().enumerate() {
            if report.before[i] == 0 {
                // a bin the clean data never used must hold injected lengths
                assert!(len <= 5);
                assert!(report.after[i] > 0);
            }
        }
    }

    #[test]
    fn data_config_requires_exactly_one_source() {
        let both = DataConfig {
            path: Some(PathBuf::from("log.csv")),
            ..DataConfig::default()
        };
        assert!(both.validate().is_err());
        let neither = DataConfig {
            synth: None,
            ..DataConfig::default()
        };
        assert!(neither.validate().is_err());
        DataConfig::default().validate().unwrap();
    }

    #[test]
    fn budgets_below_the_activity_floor_are_rejected() {
        let mut cfg = CampaignConfig::default();
        cfg.budget.m_actions = 4;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.data.min_user_activities = 4;
        cfg.validate().unwrap();
    }

    #[test]
    fn minimal_json_configs_deserialize_with_defaults() {
        let cfg: CampaignConfig =
            serde_json::from_str(r#"{"data": {"synth": {"n_users": 50}}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.budget.m_actions, 15);
        assert_eq!(cfg.budget.top_k, 10);
        assert_eq!(cfg.attacks.len(), 3);
        assert_eq!(cfg.simulator.len(), 2);
        assert_eq!(cfg.data.synth.as_ref().unwrap().n_users, 50);
        // an empty data object names no source and must not silently generate
        assert!(serde_json::from_str::<CampaignConfig>(r#"{"data": {}}"#)
            .unwrap()
            .validate()
            .is_err());
        // typoed keys fail loudly instead of silently taking defaults
        let typo = r#"{"data": {"synth": {}}, "buget": {"m_actions": 5}}"#;
        assert!(serde_json::from_str::<CampaignConfig>(typo).is_err());
    }

    /// A campaign small enough for unit-test budgets: no agent-driven attack,
    /// so only data, targets, attacks, and evaluation run.
    fn tiny_config() -> CampaignConfig {
        let mut cfg = CampaignConfig {
            seed: 17,
            ..CampaignConfig::default()
        };
        cfg.data.synth = Some(SynthSpec {
            n_users: 30,
            n_items: 24,
            n_clusters: 4,
            n_global_hits: 4,
            min_len: 6,
            max_len: 9,
            ..SynthSpec::default()
        });
        cfg.data.min_user_activities = 5;
        cfg.hyper = ModelHyper {
            dim: 4,
            epochs: 3,
            ..ModelHyper::default()
        };
        cfg.n_target_items = 3;
        cfg.n_target_users = 4;
        cfg.budget = BudgetConfig {
            user_fraction: 0.1,
            m_actions: 5,
            top_k: 5,
        };
        cfg.attacks = vec![AttackKind::Random, AttackKind::Popular];
        cfg.retrain_seeds = 2;
        cfg
    }

    #[test]
    fn control_outcome_equals_a_clean_retrain_by_hand() {
        let mut cfg = tiny_config();
        cfg.attacks = vec![];
        let report = run_campaign(&cfg).unwrap();
        assert!(report.attacks.is_empty());
        assert_eq!(report.control.attack, "none");
        assert_eq!(report.control.n_injected_users, 0);
        assert!(report.control.lengths.is_none());

        let ds = cfg.data.load_dataset(cfg.seed).unwrap();
        let targets = select_targets(
            &ds,
            cfg.n_target_items,
            cfg.n_target_users,
            substream_seed(cfg.seed, "targets"),
        )
        .unwrap();
        for (r, reported) in report.control.per_seed.iter().enumerate() {
            let seed = substream_seed(cfg.seed, &format!("retrain.{r}"));
            let model = AnyModel::train(cfg.target_model, &ds, &cfg.hyper, seed).unwrap();
            let expected = display_rate(&model, &ds, &targets, cfg.budget.top_k);
            assert_eq!(*reported, expected);
        }
    }

    #[test]
    fn campaign_reports_are_well_formed_and_deterministic() {
        let cfg = tiny_config();
        let a = run_campaign(&cfg).unwrap();
        let b = run_campaign(&cfg).unwrap();
        assert_eq!(a.attacks.len(), 2);
        for (x, y) in std::iter::once((&a.control, &b.control))
            .chain(a.attacks.iter().zip(b.attacks.iter()))
        {
            assert_eq!(x.attack, y.attack);
            assert_eq!(x.per_seed, y.per_seed);
            assert_eq!(x.display_rate, y.display_rate);
            assert!(x.display_rate.is_finite() && (0.0..=1.0).contains(&x.display_rate));
            assert_eq!(x.per_seed.len(), cfg.retrain_seeds);
        }
        for outcome in &a.attacks {
            assert_eq!(outcome.n_injected_users, 3);
            let lengths = outcome.lengths.as_ref().unwrap();
            assert!(lengths.tv_distance > 0.0);
        }
        let stages: Vec<&str> = a.timings.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(stages, ["data", "targets", "attacks", "evaluate"]);
    }
}
