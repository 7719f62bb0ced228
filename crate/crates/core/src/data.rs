//! Interaction-log ingestion and dataset construction.
//!
//! Raw logs are (user, item, timestamp) events from CSV or JSONL. Building a
//! dataset dedups exact repeats, drops low-activity users and items until the
//! thresholds hold simultaneously, densely re-indexes what survives, and
//! splits each user's chronological sequence into train / validation / test
//! (the last two events are held out).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// One raw interaction event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// Raw events plus ingest bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
    /// Count of input lines that failed to parse and were skipped.
    pub skipped: usize,
}

/// Supported log encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    /// CSV with a `user,item,timestamp` header.
    Csv,
    /// One JSON object per line with keys `user`, `item`, `ts`.
    Jsonl,
}

#[derive(Deserialize)]
struct CsvRow {
    user: String,
    item: String,
    timestamp: i64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IdValue {
    Text(String),
    Number(i64),
}

impl IdValue {
    fn into_string(self) -> String {
        match self {
            IdValue::Text(s) => s,
            IdValue::Number(n) => n.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct JsonlRow {
    user: IdValue,
    item: IdValue,
    ts: i64,
}

/// Reads a log file in the given format. Malformed lines are skipped and
/// counted, not fatal.
pub fn ingest(path: &Path, format: LogFormat) -> Result<InteractionLog> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let log = match format {
        LogFormat::Csv => ingest_csv(file)?,
        LogFormat::Jsonl => ingest_jsonl(file)?,
    };
    if log.skipped > 0 {
        log::warn!(
            "skipped {} malformed line(s) while ingesting {}",
            log.skipped,
            path.display()
        );
    }
    Ok(log)
}

fn ingest_csv<R: Read>(reader: R) -> Result<InteractionLog> {
    let mut out = InteractionLog::default();
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    for row in csv_reader.deserialize::<CsvRow>() {
        match row {
            Ok(r) => out.records.push(Interaction {
                user: r.user,
                item: r.item,
                timestamp: r.timestamp,
            }),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

fn ingest_jsonl<R: Read>(reader: R) -> Result<InteractionLog> {
    let mut out = InteractionLog::default();
    for line in BufReader::new(reader).lines() {
        let line = line.map_err(|e| Error::io("<jsonl stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JsonlRow>(&line) {
            Ok(r) => out.records.push(Interaction {
                user: r.user.into_string(),
                item: r.item.into_string(),
                timestamp: r.ts,
            }),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Per-user split bookkeeping. `train_len` is the prefix used for training;
/// users without a holdout contribute their whole sequence to training and
/// never to evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub train_len: usize,
    pub has_holdout: bool,
}

/// A filtered, densely indexed, chronologically ordered interaction dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    sequences: Vec<Vec<usize>>,
    splits: Vec<UserSplit>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_id(&self, user: usize) -> &str {
        &self.user_ids[user]
    }

    pub fn item_id(&self, item: usize) -> &str {
        &self.item_ids[item]
    }

    /// Full chronological sequence for a user.
    pub fn sequence(&self, user: usize) -> &[usize] {
        &self.sequences[user]
    }

    pub fn split(&self, user: usize) -> UserSplit {
        self.splits[user]
    }

    /// Training prefix of a user's sequence.
    pub fn train(&self, user: usize) -> &[usize] {
        &self.sequences[user][..self.splits[user].train_len]
    }

    /// Second-to-last event, present only for holdout users.
    pub fn val_item(&self, user: usize) -> Option<usize> {
        let s = &self.sequences[user];
        self.splits[user]
            .has_holdout
            .then(|| s[s.len() - 2])
    }

    /// Last event, present only for holdout users.
    pub fn test_item(&self, user: usize) -> Option<usize> {
        let s = &self.sequences[user];
        self.splits[user].has_holdout.then(|| s[s.len() - 1])
    }

    /// True for appended (injected) users that carry no holdout events.
    pub fn is_train_only(&self, user: usize) -> bool {
        !self.splits[user].has_holdout
    }

    /// Users that participate in evaluation.
    pub fn holdout_users(&self) -> Vec<usize> {
        (0..self.n_users())
            .filter(|&u| self.splits[u].has_holdout)
            .collect()
    }

    /// Number of events per item across all training prefixes.
    pub fn item_train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_items()];
        for u in 0..self.n_users() {
            for &i in self.train(u) {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Total number of training events.
    pub fn total_train_events(&self) -> usize {
        self.splits.iter().map(|s| s.train_len).sum()
    }

    /// External-id lookup table for items; used at serialization boundaries.
    pub fn item_index_map(&self) -> HashMap<&str, usize> {
        self.item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Builds a dataset directly from already-indexed sequences, bypassing
    /// filtering. Every sequence must have at least 3 events so the holdout
    /// split is well formed; items need not all be referenced.
    pub fn synthetic(sequences: Vec<Vec<usize>>, n_items: usize) -> Result<Dataset> {
        if sequences.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (u, s) in sequences.iter().enumerate() {
            if s.len() < 3 {
                return Err(Error::InvalidConfig(format!(
                    "synthetic user {u} has {} events; at least 3 are required",
                    s.len()
                )));
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= n_items) {
                return Err(Error::InvalidConfig(format!(
                    "synthetic user {u} references item {bad} outside the catalog of {n_items}"
                )));
            }
        }
        let splits = sequences
            .iter()
            .map(|s| UserSplit {
                train_len: s.len() - 2,
                has_holdout: true,
            })
            .collect();
        Ok(Dataset {
            user_ids: (0..sequences.len()).map(|u| format!("u{u}")).collect(),
            item_ids: (0..n_items).map(|i| format!("i{i}")).collect(),
            sequences,
            splits,
        })
    }

    /// Appends a training-only user (the poisoning primitive). The new user's
    /// whole sequence counts as training data and it is excluded from
    /// evaluation. Returns the new user index.
    pub fn push_train_only_user(&mut self, id: String, items: Vec<usize>) -> Result<usize> {
        if items.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "injected user {id} has an empty sequence"
            )));
        }
        if let Some(&bad) = items.iter().find(|&&i| i >= self.n_items()) {
            return Err(Error::InvalidConfig(format!(
                "injected user {id} references unknown item index {bad}"
            )));
        }
        let user = self.n_users();
        self.user_ids.push(id);
        self.splits.push(UserSplit {
            train_len: items.len(),
            has_holdout: false,
        });
        self.sequences.push(items);
        Ok(user)
    }

    /// Structural invariant audit; cheap enough to run in tests after every
    /// mutation.
    pub fn validate(&self) -> Result<()> {
        if self.user_ids.len() != self.sequences.len() || self.user_ids.len() != self.splits.len()
        {
            return Err(Error::Malformed("dataset table lengths disagree".into()));
        }
        for u in 0..self.n_users() {
            let s = &self.sequences[u];
            let sp = self.splits[u];
            if s.iter().any(|&i| i >= self.n_items()) {
                return Err(Error::Malformed(format!("user {u} has out-of-range items")));
            }
            let expected = if sp.has_holdout {
                if s.len() < 3 {
                    return Err(Error::Malformed(format!("holdout user {u} too short")));
                }
                s.len() - 2
            } else {
                s.len()
            };
            if sp.train_len != expected {
                return Err(Error::Malformed(format!("user {u} split arithmetic broken")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::artifact::save_json(path, "dataset", 1, self)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let ds: Dataset = crate::artifact::load_json(path, "dataset", 1)?;
        ds.validate()?;
        Ok(ds)
    }
}

/// Builds a dataset from a raw log.
///
/// The user threshold is clamped to at least 3 so the two-event holdout always
/// leaves a non-empty training prefix. Filtering removes items below the item
/// threshold and then users below the user threshold, repeating until neither
/// rule fires; item removal can cascade into user removal and vice versa.
pub fn build_dataset(
    log: &InteractionLog,
    min_user_activities: usize,
    min_item_activities: usize,
) -> Result<Dataset> {
    let min_user = min_user_activities.max(3);

    // Dedup exact (user, item, timestamp) repeats, preserving input order.
    let mut seen: HashSet<(&str, &str, i64)> = HashSet::new();
    let mut records: Vec<&Interaction> = Vec::new();
    for r in &log.records {
        if seen.insert((r.user.as_str(), r.item.as_str(), r.timestamp)) {
            records.push(r);
        }
    }
    drop(seen);

    // Temporary dense ids over the deduped stream.
    let mut user_of: HashMap<&str, usize> = HashMap::new();
    let mut item_of: HashMap<&str, usize> = HashMap::new();
    let mut users: Vec<&str> = Vec::new();
    let mut items: Vec<&str> = Vec::new();
    let events: Vec<(usize, usize, i64)> = records
        .iter()
        .map(|r| {
            let u = *user_of.entry(&r.user).or_insert_with(|| {
                users.push(&r.user);
                users.len() - 1
            });
            let i = *item_of.entry(&r.item).or_insert_with(|| {
                items.push(&r.item);
                items.len() - 1
            });
            (u, i, r.timestamp)
        })
        .collect();

    // Remove until both thresholds hold simultaneously.
    let mut user_ok = vec![true; users.len()];
    let mut item_ok = vec![true; items.len()];
    loop {
        let mut changed = false;
        let mut item_counts = vec![0usize; items.len()];
        for &(u, i, _) in &events {
            if user_ok[u] && item_ok[i] {
                item_counts[i] += 1;
            }
        }
        for (i, ok) in item_ok.iter_mut().enumerate() {
            if *ok && item_counts[i] < min_item_activities {
                *ok = false;
                changed = true;
            }
        }
        let mut user_counts = vec![0usize; users.len()];
        for &(u, i, _) in &events {
            if user_ok[u] && item_ok[i] {
                user_counts[u] += 1;
            }
        }
        for (u, ok) in user_ok.iter_mut().enumerate() {
            if *ok && user_counts[u] < min_user {
                *ok = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Re-index survivors in first-seen order of the surviving stream.
    let mut final_user: HashMap<usize, usize> = HashMap::new();
    let mut final_item: HashMap<usize, usize> = HashMap::new();
    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    // (timestamp, arrival order, item) per user; arrival order breaks ties.
    let mut per_user: Vec<Vec<(i64, usize, usize)>> = Vec::new();
    for (ord, &(u, i, ts)) in events.iter().enumerate() {
        if !(user_ok[u] && item_ok[i]) {
            continue;
        }
        let du = *final_user.entry(u).or_insert_with(|| {
            user_ids.push(users[u].to_string());
            per_user.push(Vec::new());
            user_ids.len() - 1
        });
        let di = *final_item.entry(i).or_insert_with(|| {
            item_ids.push(items[i].to_string());
            item_ids.len() - 1
        });
        per_user[du].push((ts, ord, di));
    }
    if user_ids.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut sequences = Vec::with_capacity(per_user.len());
    let mut splits = Vec::with_capacity(per_user.len());
    for mut evs in per_user {
        evs.sort_unstable();
        let seq: Vec<usize> = evs.into_iter().map(|(_, _, i)| i).collect();
        splits.push(UserSplit {
            train_len: seq.len() - 2,
            has_holdout: true,
        });
        sequences.push(seq);
    }

    let ds = Dataset {
        user_ids,
        item_ids,
        sequences,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

/// The attack objective: which items to promote, scored against which users.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub target_items: Vec<usize>,
    pub target_users: Vec<usize>,
}

/// Samples target items from the lower three popularity quartiles and target
/// users whose training history avoids every target item.
///
/// If more items are requested than the lower quartiles hold, the whole
/// catalog becomes eligible (logged as a degenerate fallback). Users without a
/// holdout split are never targets.
pub fn select_targets(
    ds: &Dataset,
    n_target_items: usize,
    n_target_users: usize,
    seed: u64,
) -> Result<TargetSpec> {
    if n_target_items == 0 || n_target_items > ds.n_items() {
        return Err(Error::InvalidConfig(format!(
            "n_target_items must be in 1..={}, got {n_target_items}",
            ds.n_items()
        )));
    }
    if n_target_users > ds.n_users() {
        return Err(Error::InvalidConfig(format!(
            "n_target_users must be at most {}, got {n_target_users}",
            ds.n_users()
        )));
    }

    let counts = ds.item_train_counts();
    let mut by_popularity: Vec<usize> = (0..ds.n_items()).collect();
    by_popularity.sort_by_key(|&i| (counts[i], i));
    let cutoff = ds.n_items() * 3 / 4;
    let eligible_items: &[usize] = if n_target_items <= cutoff {
        &by_popularity[..cutoff]
    } else {
        log::warn!(
            "requested {n_target_items} target items but the lower quartiles hold only {cutoff}; \
             sampling from the whole catalog"
        );
        &by_popularity
    };

    let mut rng = substream(seed, "select-targets.items");
    let picked = rand::seq::index::sample(&mut rng, eligible_items.len(), n_target_items);
    let mut target_items: Vec<usize> = picked.iter().map(|k| eligible_items[k]).collect();
    target_items.sort_unstable();
    let target_set: HashSet<usize> = target_items.iter().copied().collect();

    let eligible_users: Vec<usize> = (0..ds.n_users())
        .filter(|&u| {
            ds.split(u).has_holdout && ds.train(u).iter().all(|i| !target_set.contains(i))
        })
        .collect();
    if eligible_users.len() < n_target_users {
        return Err(Error::NoEligibleUsers {
            needed: n_target_users,
            available: eligible_users.len(),
        });
    }
    let mut rng = substream(seed, "select-targets.users");
    let picked = rand::seq::index::sample(&mut rng, eligible_users.len(), n_target_users);
    let mut target_users: Vec<usize> = picked.iter().map(|k| eligible_users[k]).collect();
    target_users.sort_unstable();

    Ok(TargetSpec {
        target_items,
        target_users,
    })
}
