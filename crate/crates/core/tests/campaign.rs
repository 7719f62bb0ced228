//! End-to-end campaign harness checks: report shape, sweep/standalone
//! agreement, budget trends, config round-trips, and export formats.

use std::path::Path;

use poisonforge_core::actionspace::ActionSpaceConfig;
use poisonforge_core::agent::DqnConfig;
use poisonforge_core::attacks::{n_controlled_users, AttackKind};
use poisonforge_core::evalharness::{
    run_campaign, run_sweep, write_display_rate_csv, write_json, write_length_csv,
    write_sweep_csv, BudgetConfig, CampaignConfig, CampaignReport, DataConfig, SweepConfig,
};
use poisonforge_core::influence::LissaConfig;
use poisonforge_core::recmodels::{ModelHyper, ModelKind};
use poisonforge_core::simulator::MemberSpec;
use poisonforge_core::synth::SynthSpec;

/// A deliberately small dataset/model so a full three-attack campaign stays in
/// the tens of seconds.
fn small_config() -> CampaignConfig {
    CampaignConfig {
        seed: 31,
        data: DataConfig {
            synth: Some(SynthSpec {
                n_users: 300,
                n_items: 100,
                n_clusters: 10,
                n_global_hits: 4,
                global_hit_prob: 0.25,
                markov_within: 0.45,
                ..SynthSpec::default()
            }),
            ..DataConfig::default()
        },
        target_model: ModelKind::Bprmf,
        simulator: vec![
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
        ],
        hyper: ModelHyper {
            dim: 8,
            epochs: 60,
            ..ModelHyper::default()
        },
        n_target_items: 4,
        n_target_users: 12,
        budget: BudgetConfig {
            user_fraction: 0.04,
            m_actions: 8,
            top_k: 5,
        },
        attacks: vec![AttackKind::Random, AttackKind::Popular, AttackKind::Loki],
        retrain_seeds: 2,
        lissa: LissaConfig {
            depth: 300,
            scale: 25.0,
            repeats: 1,
            batch: 32,
            damping: 0.05,
        },
        dqn: DqnConfig {
            epochs: 12,
            episodes_per_epoch: 2,
            embed_dim: 4,
            hidden_dim: 8,
            ..DqnConfig::default()
        },
        action_space: ActionSpaceConfig {
            nmf_rank: 6,
            nmf_iters: 30,
            n_clusters: 4,
            kmeans_iters: 10,
        },
        ..CampaignConfig::default()
    }
}

/// The same lab without the agent stack: baseline attacks only, for tests
/// that exercise the harness rather than the attacker.
fn baseline_config() -> CampaignConfig {
    CampaignConfig {
        attacks: vec![AttackKind::Random, AttackKind::Popular],
        hyper: ModelHyper {
            dim: 8,
            epochs: 150,
            ..ModelHyper::default()
        },
        ..small_config()
    }
}

fn assert_outcome_shape(report: &CampaignReport, retrain_seeds: usize) {
    for outcome in std::iter::once(&report.control).chain(report.attacks.iter()) {
        assert_eq!(
            outcome.per_seed.len(),
            retrain_seeds,
            "{}: unexpected per-seed count",
            outcome.attack
        );
        let mean = outcome.per_seed.iter().sum::<f64>() / outcome.per_seed.len() as f64;
        assert!(
            (outcome.display_rate - mean).abs() < 1e-12,
            "{}: display_rate is not the per-seed mean",
            outcome.attack
        );
        for &r in &outcome.per_seed {
            assert!((0.0..=1.0).contains(&r), "{}: rate {r} out of range", outcome.attack);
        }
    }
}

#[test]
fn full_campaign_report_shape() {
    let cfg = small_config();
    let report = run_campaign(&cfg).unwrap();

    assert_eq!(report.seed, cfg.seed);
    assert_eq!(report.target_model, cfg.target_model);
    assert_eq!(report.n_clean_users, 300);
    assert_eq!(report.n_items, 100);

    assert_eq!(report.control.attack, "none");
    assert_eq!(report.control.n_injected_users, 0);
    assert!(report.control.lengths.is_none());
    assert_outcome_shape(&report, cfg.retrain_seeds);

    let names: Vec<&str> = report.attacks.iter().map(|a| a.attack.as_str()).collect();
    assert_eq!(names, ["random", "popular", "loki"]);

    let expected_injected = n_controlled_users(report.n_clean_users, cfg.budget.user_fraction);
    for outcome in &report.attacks {
        assert_eq!(outcome.n_injected_users, expected_injected);
        let lengths = outcome
            .lengths
            .as_ref()
            .expect("attack outcomes carry length reports");
        assert!((0.0..=1.0).contains(&lengths.tv_distance));
        let mut injected_total = 0;
        for (i, &len) in lengths.lengths.iter().enumerate() {
            let added = lengths.after[i] - lengths.before[i];
            injected_total += added;
            if added > 0 {
                assert!(
                    len <= cfg.budget.m_actions,
                    "{}: injected length {len} exceeds the action budget",
                    outcome.attack
                );
            }
        }
        assert_eq!(injected_total, expected_injected);
    }

    assert!(!report.timings.is_empty());
    let mut stages: Vec<&str> = report.timings.iter().map(|t| t.stage.as_str()).collect();
    stages.sort_unstable();
    stages.dedup();
    assert_eq!(stages.len(), report.timings.len(), "duplicate stage names");
}

#[test]
fn sweep_matches_standalone_and_budget_trend() {
    let mut cfg = baseline_config();
    cfg.sweep = Some(SweepConfig {
        user_fractions: vec![0.01, 0.05],
        m_actions: vec![6, 12],
    });
    let sweep = run_sweep(&cfg).unwrap();
    assert_eq!(sweep.points.len(), 4);

    // A sweep point is a plain campaign at that budget with the same master
    // seed; spot-check one point for exact agreement.
    let probe = &sweep.points[3];
    let mut standalone_cfg = cfg.clone();
    standalone_cfg.sweep = None;
    standalone_cfg.budget.user_fraction = probe.user_fraction;
    standalone_cfg.budget.m_actions = probe.m_actions;
    let standalone = run_campaign(&standalone_cfg).unwrap();
    assert_eq!(
        probe.report.control.per_seed, standalone.control.per_seed,
        "sweep point control diverged from the standalone campaign"
    );
    for (a, b) in probe.report.attacks.iter().zip(standalone.attacks.iter()) {
        assert_eq!(a.attack, b.attack);
        assert_eq!(a.per_seed, b.per_seed, "{}: sweep point diverged", a.attack);
    }

    // The control never sees the injections, so its numbers cannot depend on
    // the budget point.
    for point in &sweep.points[1..] {
        assert_eq!(point.report.control.per_seed, sweep.points[0].report.control.per_seed);
    }

    // More controlled users at the same seed should help on average; individual
    // (attack, m) pairs may still invert through retraining noise.
    let mut deltas = Vec::new();
    for m in [6, 12] {
        let rate = |fraction: f64, name: &str| -> f64 {
            let point = sweep
                .points
                .iter()
                .find(|p| p.user_fraction == fraction && p.m_actions == m)
                .unwrap();
            point
                .report
                .attacks
                .iter()
                .find(|a| a.attack == name)
                .unwrap()
                .display_rate
        };
        for name in ["random", "popular"] {
            deltas.push(rate(0.05, name) - rate(0.01, name));
        }
    }
    let mean_delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
    assert!(
        mean_delta >= 0.0,
        "raising the injection budget lowered mean display rate: {deltas:?}"
    );
}

#[test]
fn config_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("campaign.json");

    let mut cfg = baseline_config();
    cfg.sweep = Some(SweepConfig::default());
    write_json(&cfg, &path).unwrap();
    let loaded = CampaignConfig::from_path(&path).unwrap();
    assert_eq!(
        serde_json::to_value(&cfg).unwrap(),
        serde_json::to_value(&loaded).unwrap(),
        "config changed across a JSON round-trip"
    );

    // Unknown fields are configuration mistakes, not extensions.
    let bogus = dir.path().join("bogus.json");
    std::fs::write(&bogus, r#"{"data": {"synth": {}}, "not_a_field": 1}"#).unwrap();
    assert!(CampaignConfig::from_path(&bogus).is_err());

    // Structurally valid JSON still has to pass semantic validation: injected
    // profiles shorter than the activity floor would dodge the dataset filter.
    let mut low = baseline_config();
    low.budget.m_actions = low.data.min_user_activities - 1;
    let low_path = dir.path().join("low.json");
    write_json(&low, &low_path).unwrap();
    assert!(CampaignConfig::from_path(&low_path).is_err());

    assert!(CampaignConfig::from_path(Path::new("/nonexistent/config.json")).is_err());
}

#[test]
fn report_writers_emit_parseable_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = baseline_config();
    cfg.sweep = Some(SweepConfig {
        user_fractions: vec![0.02, 0.05],
        m_actions: vec![8],
    });
    let report = run_campaign(&cfg).unwrap();
    let sweep = run_sweep(&cfg).unwrap();

    let json_path = dir.path().join("report.json");
    write_json(&report, &json_path).unwrap();
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(value["seed"], serde_json::json!(cfg.seed));
    assert_eq!(value["attacks"].as_array().unwrap().len(), report.attacks.len());
    let reparsed: CampaignReport = serde_json::from_value(value).unwrap();
    assert_eq!(reparsed.control.per_seed, report.control.per_seed);

    let rates_path = dir.path().join("rates.csv");
    write_display_rate_csv(&report, &rates_path).unwrap();
    let mut reader = csv::Reader::from_path(&rates_path).unwrap();
    assert_eq!(
        reader.headers().unwrap(),
        &csv::StringRecord::from(vec!["attack", "seed", "display_rate"])
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let outcomes = 1 + report.attacks.len();
    assert_eq!(rows.len(), outcomes * (cfg.retrain_seeds + 1));
    let mean_row = rows
        .iter()
        .find(|r| &r[0] == "none" && &r[1] == "mean")
        .expect("control mean row");
    assert_eq!(mean_row[2].parse::<f64>().unwrap(), report.control.display_rate);

    let sweep_path = dir.path().join("sweep.csv");
    write_sweep_csv(&sweep, &sweep_path).unwrap();
    let mut reader = csv::Reader::from_path(&sweep_path).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), sweep.points.len() * outcomes);
    for row in &rows {
        row[0].parse::<f64>().unwrap();
        row[1].parse::<usize>().unwrap();
        row[3].parse::<f64>().unwrap();
    }

    let lengths = report.attacks[0].lengths.as_ref().unwrap();
    let len_path = dir.path().join("lengths.csv");
    write_length_csv(lengths, &len_path).unwrap();
    let mut reader = csv::Reader::from_path(&len_path).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), lengths.lengths.len());
    let injected: i64 = rows
        .iter()
        .map(|r| r[2].parse::<i64>().unwrap() - r[1].parse::<i64>().unwrap())
        .sum();
    assert_eq!(injected as usize, report.attacks[0].n_injected_users);
}
