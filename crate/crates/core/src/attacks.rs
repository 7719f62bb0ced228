//! Poisoning-sequence generators. The two baselines (random, popular) and
//! the learned agent all emit the same injected-profile format, so the
//! evaluation harness can swap them freely.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actionspace::ItemGroups;
use crate::agent::{generate_poison_sequences, QNetwork};
use crate::data::{Dataset, TargetSpec};
use crate::error::{Error, Result};
use crate::rng::substream_n;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Random,
    Popular,
    Loki,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Random => "random",
            AttackKind::Popular => "popular",
            AttackKind::Loki => "loki",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One controlled user's fabricated behavior profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedUser {
    /// Synthetic account tag, `inj:<attack>:<k>`.
    pub tag: String,
    /// Internal item indices, in interaction order.
    pub items: Vec<usize>,
    pub provenance: AttackKind,
}

/// Every profile produced by one attack run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectedSet {
    pub attack: AttackKind,
    pub users: Vec<InjectedUser>,
}

impl InjectedSet {
    /// Budget and well-formedness check: sequences non-empty, within the
    /// action budget, free of within-user repeats, and on-catalog.
    pub fn validate(&self, max_len: usize, n_items: usize) -> Result<()> {
        for u in &self.users {
            if u.items.is_empty() || u.items.len() > max_len {
                return Err(Error::Malformed(format!(
                    "profile {} has {} items, budget is 1..={max_len}",
                    u.tag,
                    u.items.len()
                )));
            }
            let mut seen = HashSet::with_capacity(u.items.len());
            for &i in &u.items {
                if i >= n_items {
                    return Err(Error::Malformed(format!(
                        "profile {} references item {i} outside the catalog",
                        u.tag
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Malformed(format!(
                        "profile {} repeats item {i}",
                        u.tag
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes one JSON object per line, with items as external catalog ids.
    pub fn write_jsonl(&self, path: &Path, ds: &Dataset) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        for u in &self.users {
            let row = JsonlRow {
                user: u.tag.clone(),
                items: u.items.iter().map(|&i| ds.item_id(i).to_string()).collect(),
                provenance: u.provenance,
            };
            serde_json::to_writer(&mut w, &row)?;
            writeln!(w).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Reads profiles back, resolving external ids against the dataset.
    pub fn read_jsonl(path: &Path, ds: &Dataset, attack: AttackKind) -> Result<InjectedSet> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let index = ds.item_index_map();
        let mut users = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: JsonlRow = serde_json::from_str(&line)?;
            let mut items = Vec::with_capacity(row.items.len());
            for id in &row.items {
                let &idx = index.get(id.as_str()).ok_or_else(|| {
                    Error::Malformed(format!(
                        "{} line {}: unknown item id {id}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                items.push(idx);
            }
            users.push(InjectedUser {
                tag: row.user,
                items,
                provenance: row.provenance,
            });
        }
        Ok(InjectedSet { attack, users })
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    user: String,
    items: Vec<String>,
    provenance: AttackKind,
}

/// Controlled-user budget: the rounded fraction of the clean user base.
pub fn n_controlled_users(n_clean_users: usize, fraction: f64) -> usize {
    (fraction * n_clean_users as f64).round() as usize
}

/// Random baseline: each controlled user draws its sequence uniformly,
/// without repetition, from a per-user repository of the target items plus
/// uniformly chosen filler items.
pub fn random_attack(
    ds: &Dataset,
    targets: &TargetSpec,
    n_users: usize,
    m_actions: usize,
    repo_size: usize,
    seed: u64,
) -> Result<InjectedSet> {
    if repo_size < m_actions {
        return Err(Error::InvalidConfig(format!(
            "repository size {repo_size} is below the action budget {m_actions}"
        )));
    }
    let target_set: HashSet<usize> = targets.target_items.iter().copied().collect();
    let fillers: Vec<usize> = (0..ds.n_items()).filter(|i| !target_set.contains(i)).collect();
    let mut users = Vec::with_capacity(n_users);
    for k in 0..n_users {
        let mut rng = substream_n(seed, "attack-random", k as u64);
        let mut repo: Vec<usize> = targets.target_items.clone();
        let n_fill = repo_size.saturating_sub(repo.len()).min(fillers.len());
        for idx in rand::seq::index::sample(&mut rng, fillers.len(), n_fill) {
            repo.push(fillers[idx]);
        }
        let take = m_actions.min(repo.len());
        let items: Vec<usize> = rand::seq::index::sample(&mut rng, repo.len(), take)
            .iter()
            .map(|idx| repo[idx])
            .collect();
        users.push(InjectedUser {
            tag: format!("inj:random:{k}"),
            items,
            provenance: AttackKind::Random,
        });
    }
    Ok(InjectedSet {
        attack: AttackKind::Random,
        users,
    })
}

/// Popularity baseline: sequences alternate globally popular items with
/// target items, fabricating co-visitations between the two. Target slots
/// rotate through the target list with a cursor shared across users so every
/// target gets promoted; an exhausted side falls back to the other.
pub fn popular_attack(
    ds: &Dataset,
    targets: &TargetSpec,
    n_users: usize,
    m_actions: usize,
) -> Result<InjectedSet> {
    if m_actions < 2 {
        return Err(Error::InvalidConfig(
            "popular attack needs m_actions >= 2 to alternate".into(),
        ));
    }
    let target_set: HashSet<usize> = targets.target_items.iter().copied().collect();
    let counts = ds.item_train_counts();
    let mut by_popularity: Vec<usize> = (0..ds.n_items())
        .filter(|i| !target_set.contains(i))
        .collect();
    by_popularity.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), i));

    let mut cursor = 0usize; // shared target rotation across users
    let mut users = Vec::with_capacity(n_users);
    for k in 0..n_users {
        let mut items: Vec<usize> = Vec::with_capacity(m_actions);
        let mut used: HashSet<usize> = HashSet::new();
        let mut next_popular = 0usize;
        while items.len() < m_actions {
            let want_target = items.len() % 2 == 1;
            let mut pick = None;
            if want_target {
                for _ in 0..targets.target_items.len() {
                    let cand = targets.target_items[cursor % targets.target_items.len()];
                    cursor += 1;
                    if !used.contains(&cand) {
                        pick = Some(cand);
                        break;
                    }
                }
            }
            if pick.is_none() {
                // popular slot, or a target slot with every target already used
                while next_popular < by_popularity.len() {
                    let cand = by_popularity[next_popular];
                    next_popular += 1;
                    if !used.contains(&cand) {
                        pick = Some(cand);
                        break;
                    }
                }
            }
            if pick.is_none() && !want_target {
                // popular side ran dry: spend remaining unused targets
                pick = targets
                    .target_items
                    .iter()
                    .copied()
                    .find(|c| !used.contains(c));
            }
            match pick {
                Some(item) => {
                    used.insert(item);
                    items.push(item);
                }
                None => break, // catalog exhausted; shorter profile is fine
            }
        }
        users.push(InjectedUser {
            tag: format!("inj:popular:{k}"),
            items,
            provenance: AttackKind::Popular,
        });
    }
    Ok(InjectedSet {
        attack: AttackKind::Popular,
        users,
    })
}

/// Learned attack: greedy rollouts of the trained agent over the item groups.
pub fn loki_attack(
    net: &QNetwork,
    groups: &ItemGroups,
    n_users: usize,
    m_actions: usize,
    seed: u64,
) -> Result<InjectedSet> {
    if groups.target_group().is_empty() {
        return Err(Error::EmptyTargetGroup);
    }
    let rollouts = generate_poison_sequences(net, groups, n_users, m_actions, seed, true)?;
    let users = rollouts
        .into_iter()
        .enumerate()
        .map(|(k, r)| InjectedUser {
            tag: format!("inj:loki:{k}"),
            items: r.items,
            provenance: AttackKind::Loki,
        })
        .collect();
    Ok(InjectedSet {
        attack: AttackKind::Loki,
        users,
    })
}
