//! The agent's action space: item groups.
//!
//! Group 0 is the target items, group 1 the union of the target users'
//! training histories, and the remaining catalog is clustered by K-means over
//! NMF item features. Actions pick a group; concrete items are sampled
//! uniformly from the chosen group without repetition inside one injected
//! profile.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::data::{Dataset, TargetSpec};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Knobs for the NMF + K-means group construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpaceConfig {
    #[serde(default = "default_nmf_rank")]
    pub nmf_rank: usize,
    #[serde(default = "default_nmf_iters")]
    pub nmf_iters: usize,
    #[serde(default = "default_n_clusters")]
    pub n_clusters: usize,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
}

fn default_nmf_rank() -> usize {
    16
}
fn default_nmf_iters() -> usize {
    200
}
fn default_n_clusters() -> usize {
    8
}
fn default_kmeans_iters() -> usize {
    50
}

impl Default for ActionSpaceConfig {
    fn default() -> Self {
        ActionSpaceConfig {
            nmf_rank: default_nmf_rank(),
            nmf_iters: default_nmf_iters(),
            n_clusters: default_n_clusters(),
            kmeans_iters: default_kmeans_iters(),
        }
    }
}

impl ActionSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nmf_rank == 0 {
            return Err(Error::InvalidConfig("nmf_rank must be >= 1".into()));
        }
        if self.n_clusters == 0 {
            return Err(Error::InvalidConfig("n_clusters must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// NMF

/// Factor pair from multiplicative-update NMF, with the squared Frobenius
/// reconstruction error after each iteration.
#[derive(Debug, Clone)]
pub struct NmfFactors {
    pub n_rows: usize,
    pub n_cols: usize,
    pub rank: usize,
    /// Row factors, n_rows x rank.
    pub w: Vec<f64>,
    /// Column factors, n_cols x rank.
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
}

const NMF_EPS: f64 = 1e-12;

/// Multiplicative-update NMF on a sparse nonnegative matrix given as
/// (row, col, value) entries. Duplicate entries are summed.
pub fn nmf(
    entries: &[(usize, usize, f64)],
    n_rows: usize,
    n_cols: usize,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<NmfFactors> {
    if rank == 0 {
        return Err(Error::InvalidConfig("nmf rank must be >= 1".into()));
    }
    if rank > n_rows.min(n_cols) {
        return Err(Error::InvalidConfig(format!(
            "nmf rank {rank} exceeds min dimension {}",
            n_rows.min(n_cols)
        )));
    }
    for &(r, c, x) in entries {
        if r >= n_rows || c >= n_cols {
            return Err(Error::Malformed(format!("nmf entry ({r},{c}) out of range")));
        }
        if !(x.is_finite() && x >= 0.0) {
            return Err(Error::Malformed(format!("nmf entry value {x} is not nonnegative")));
        }
    }

    let mut rng = substream(seed, "nmf-init");
    let mut w: Vec<f64> = (0..n_rows * rank).map(|_| rng.random_range(0.1..1.0)).collect();
    let mut h: Vec<f64> = (0..n_cols * rank).map(|_| rng.random_range(0.1..1.0)).collect();
    let x_norm_sq: f64 = entries.iter().map(|&(_, _, x)| x * x).sum();

    let mut errors = Vec::with_capacity(iters);
    for _ in 0..iters {
        // W <- W * (X H) / (W H^T H)
        let gram_h = gram(&h, rank);
        let mut num = vec![0.0; n_rows * rank];
        for &(r, c, x) in entries {
            for k in 0..rank {
                num[r * rank + k] += x * h[c * rank + k];
            }
        }
        for r in 0..n_rows {
            let row = &mut w[r * rank..(r + 1) * rank];
            let denom = mat_vec(&gram_h, row, rank);
            for k in 0..rank {
                row[k] *= num[r * rank + k] / (denom[k] + NMF_EPS);
            }
        }
        // H <- H * (X^T W) / (H W^T W)
        let gram_w = gram(&w, rank);
        let mut num = vec![0.0; n_cols * rank];
        for &(r, c, x) in entries {
            for k in 0..rank {
                num[c * rank + k] += x * w[r * rank + k];
            }
        }
        for c in 0..n_cols {
            let row = &mut h[c * rank..(c + 1) * rank];
            let denom = mat_vec(&gram_w, row, rank);
            for k in 0..rank {
                row[k] *= num[c * rank + k] / (denom[k] + NMF_EPS);
            }
        }
        // |X - W H^T|^2 without materializing the dense product
        let gram_w = gram(&w, rank);
        let gram_h = gram(&h, rank);
        let mut cross = 0.0;
        for &(r, c, x) in entries {
            let mut s = 0.0;
            for k in 0..rank {
                s += w[r * rank + k] * h[c * rank + k];
            }
            cross += x * s;
        }
        let mut trace = 0.0;
        for a in 0..rank {
            for b in 0..rank {
                trace += gram_w[a * rank + b] * gram_h[a * rank + b];
            }
        }
        let err = (x_norm_sq - 2.0 * cross + trace).max(0.0);
        if !err.is_finite() {
            return Err(Error::NonFinite("nmf reconstruction error".into()));
        }
        errors.push(err);
    }
    crate::linalg::ensure_finite(&w, "nmf row factors")?;
    crate::linalg::ensure_finite(&h, "nmf column factors")?;
    Ok(NmfFactors {
        n_rows,
        n_cols,
        rank,
        w,
        h,
        errors,
    })
}

/// `m^T m` for a tall matrix stored row-major with `rank` columns.
fn gram(m: &[f64], rank: usize) -> Vec<f64> {
    let mut g = vec![0.0; rank * rank];
    for row in m.chunks_exact(rank) {
        for a in 0..rank {
            for b in 0..rank {
                g[a * rank + b] += row[a] * row[b];
            }
        }
    }
    g
}

fn mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, x) in v.iter().enumerate() {
            *o += m[i * n + j] * x;
        }
    }
    out
}

/// Nonnegative item features from the binary user-item training matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemFeatures {
    pub n_items: usize,
    pub rank: usize,
    /// Row-major n_items x rank.
    pub data: Vec<f64>,
    pub recon_errors: Vec<f64>,
}

impl ItemFeatures {
    pub fn row(&self, item: usize) -> &[f64] {
        &self.data[item * self.rank..(item + 1) * self.rank]
    }
}

/// Factorizes the binary user-item matrix built from training prefixes and
/// returns the item-side factors.
pub fn nmf_item_features(ds: &Dataset, rank: usize, iters: usize, seed: u64) -> Result<ItemFeatures> {
    let mut entries = Vec::new();
    for u in 0..ds.n_users() {
        let unique: HashSet<usize> = ds.train(u).iter().copied().collect();
        for i in unique {
            entries.push((u, i, 1.0));
        }
    }
    let rank = rank.min(ds.n_users().min(ds.n_items()));
    let factors = nmf(&entries, ds.n_users(), ds.n_items(), rank, iters, seed)?;
    Ok(ItemFeatures {
        n_items: ds.n_items(),
        rank,
        data: factors.h,
        recon_errors: factors.errors,
    })
}

// ---------------------------------------------------------------------------
// K-means

#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    pub assignments: Vec<usize>,
    /// Row-major c x dim.
    pub centroids: Vec<f64>,
    pub wcss: f64,
    pub iters_run: usize,
}

/// Lloyd's algorithm with k-means++ style seeding. Converges when the
/// assignment vector stops changing or `max_iters` is hit; an emptied cluster
/// is reseeded to the point farthest from its centroid.
pub fn kmeans(
    points: &[f64],
    dim: usize,
    c: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansOutcome> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::InvalidConfig("kmeans points must be n x dim".into()));
    }
    let n = points.len() / dim;
    if c == 0 || c > n {
        return Err(Error::InvalidConfig(format!(
            "kmeans cluster count must be in 1..={n}, got {c}"
        )));
    }
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = substream(seed, "kmeans");

    // k-means++ seeding: next centroid drawn with probability proportional to
    // squared distance from the chosen set
    let mut centroids = Vec::with_capacity(c * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(pt(first));
    let mut dist_sq: Vec<f64> = (0..n).map(|i| sq_dist(pt(i), pt(first))).collect();
    while centroids.len() < c * dim {
        let total: f64 = dist_sq.iter().sum();
        let pick = if total > 0.0 {
            let mut ball = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dist_sq.iter().enumerate() {
                if ball < d {
                    chosen = i;
                    break;
                }
                ball -= d;
            }
            chosen
        } else {
            rng.random_range(0..n) // identical points: any seed works
        };
        centroids.extend_from_slice(pt(pick));
        let newest = &centroids[centroids.len() - dim..];
        for (i, d) in dist_sq.iter_mut().enumerate() {
            *d = d.min(sq_dist(pt(i), newest));
        }
    }

    let mut assignments = vec![0usize; n];
    let mut iters_run = 0;
    for _ in 0..max_iters {
        iters_run += 1;
        let mut changed = false;
        // assignments[i] is compared and overwritten while pt(i) is read: index loop intended
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for g in 0..c {
                let d = sq_dist(pt(i), &centroids[g * dim..(g + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = g;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; c];
        centroids.iter_mut().for_each(|x| *x = 0.0);
        for (i, &g) in assignments.iter().enumerate() {
            counts[g] += 1;
            for (cd, pd) in centroids[g * dim..(g + 1) * dim].iter_mut().zip(pt(i)) {
                *cd += pd;
            }
        }
        for g in 0..c {
            if counts[g] > 0 {
                let inv = 1.0 / counts[g] as f64;
                centroids[g * dim..(g + 1) * dim]
                    .iter_mut()
                    .for_each(|x| *x *= inv);
            } else {
                // reseed to the farthest point from its current centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(pt(a), &centroids[assignments[a] * dim..][..dim]);
                        let db = sq_dist(pt(b), &centroids[assignments[b] * dim..][..dim]);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                let far_pt = pt(far).to_vec();
                centroids[g * dim..(g + 1) * dim].copy_from_slice(&far_pt);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let wcss = assignments
        .iter()
        .enumerate()
        .map(|(i, &g)| sq_dist(pt(i), &centroids[g * dim..(g + 1) * dim]))
        .sum();
    Ok(KmeansOutcome {
        assignments,
        centroids,
        wcss,
        iters_run,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Within-cluster sum of squares of an arbitrary assignment, with centroids
/// at the cluster means. Oracle helper for comparing against [`kmeans`].
pub fn assignment_wcss(points: &[f64], dim: usize, assignments: &[usize], c: usize) -> f64 {
    let n = points.len() / dim;
    let mut sums = vec![0.0; c * dim];
    let mut counts = vec![0usize; c];
    for i in 0..n {
        counts[assignments[i]] += 1;
        for (s, p) in sums[assignments[i] * dim..][..dim]
            .iter_mut()
            .zip(&points[i * dim..(i + 1) * dim])
        {
            *s += p;
        }
    }
    for g in 0..c {
        if counts[g] > 0 {
            let inv = 1.0 / counts[g] as f64;
            sums[g * dim..(g + 1) * dim].iter_mut().for_each(|x| *x *= inv);
        }
    }
    (0..n)
        .map(|i| sq_dist(&points[i * dim..(i + 1) * dim], &sums[assignments[i] * dim..][..dim]))
        .sum()
}

// ---------------------------------------------------------------------------
// Groups

/// The grouped catalog the agent acts over. Group 0 is always the target
/// items; group 1, when present, the target users' history items; later
/// groups are clusters partitioning the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemGroups {
    groups: Vec<Vec<usize>>,
    /// Whether index 1 is the history group (it is dropped when empty).
    has_history_group: bool,
    n_items: usize,
}

impl ItemGroups {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn target_group(&self) -> &[usize] {
        &self.groups[0]
    }

    pub fn has_history_group(&self) -> bool {
        self.has_history_group
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Every item in at most one group; specials plus clusters cover either
    /// the whole catalog or just the specials when clustering was skipped.
    pub fn check_partition(&self) -> Result<()> {
        let mut seen = vec![false; self.n_items];
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::Malformed("empty item group".into()));
            }
            for &i in g {
                if i >= self.n_items || seen[i] {
                    return Err(Error::Malformed(format!(
                        "item {i} repeated across groups or out of range"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    /// Direct assembly from already-validated parts; crate tests use this to
    /// stage contrived group layouts.
    #[cfg(test)]
    pub(crate) fn from_raw(
        groups: Vec<Vec<usize>>,
        has_history_group: bool,
        n_items: usize,
    ) -> ItemGroups {
        let out = ItemGroups {
            groups,
            has_history_group,
            n_items,
        };
        debug_assert!(out.check_partition().is_ok());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::save_json(path, "groups", 1, self)
    }

    pub fn load(path: &Path) -> Result<ItemGroups> {
        artifact::load_json(path, "groups", 1)
    }
}

/// Assembles groups from a full-catalog cluster assignment. Special-group
/// membership overrides cluster membership; emptied clusters are dropped and
/// the ids compacted.
pub fn build_groups(ds: &Dataset, targets: &TargetSpec, assignments: &[usize]) -> Result<ItemGroups> {
    if assignments.len() != ds.n_items() {
        return Err(Error::InvalidConfig(format!(
            "assignments cover {} items, dataset has {}",
            assignments.len(),
            ds.n_items()
        )));
    }
    if targets.target_items.is_empty() {
        return Err(Error::EmptyTargetGroup);
    }
    let target_set: HashSet<usize> = targets.target_items.iter().copied().collect();
    let mut history_set: HashSet<usize> = HashSet::new();
    for &u in &targets.target_users {
        for &i in ds.train(u) {
            if !target_set.contains(&i) {
                history_set.insert(i);
            }
        }
    }

    let mut target_group: Vec<usize> = target_set.iter().copied().collect();
    target_group.sort_unstable();
    let mut history_group: Vec<usize> = history_set.iter().copied().collect();
    history_group.sort_unstable();

    let n_clusters = assignments.iter().max().map_or(0, |&m| m + 1);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (item, &g) in assignments.iter().enumerate() {
        if !target_set.contains(&item) && !history_set.contains(&item) {
            clusters[g].push(item);
        }
    }

    let mut groups = vec![target_group];
    let has_history_group = !history_group.is_empty();
    if has_history_group {
        groups.push(history_group);
    }
    groups.extend(clusters.into_iter().filter(|c| !c.is_empty()));

    let out = ItemGroups {
        groups,
        has_history_group,
        n_items: ds.n_items(),
    };
    out.check_partition()?;
    Ok(out)
}

/// Full pipeline: NMF features on the training matrix, K-means over the
/// non-special items, then group assembly.
pub fn build_item_groups(
    ds: &Dataset,
    targets: &TargetSpec,
    cfg: &ActionSpaceConfig,
    seed: u64,
) -> Result<ItemGroups> {
    cfg.validate()?;
    if targets.target_items.is_empty() {
        return Err(Error::EmptyTargetGroup);
    }
    let special: HashSet<usize> = targets
        .target_items
        .iter()
        .copied()
        .chain(
            targets
                .target_users
                .iter()
                .flat_map(|&u| ds.train(u).iter().copied()),
        )
        .collect();
    let remaining: Vec<usize> = (0..ds.n_items()).filter(|i| !special.contains(i)).collect();

    let mut assignments = vec![0usize; ds.n_items()];
    if !remaining.is_empty() {
        let features = nmf_item_features(ds, cfg.nmf_rank, cfg.nmf_iters, seed)?;
        let mut rows = Vec::with_capacity(remaining.len() * features.rank);
        for &i in &remaining {
            rows.extend_from_slice(features.row(i));
        }
        let c = cfg.n_clusters.min(remaining.len());
        let outcome = kmeans(&rows, features.rank, c, seed, cfg.kmeans_iters)?;
        for (j, &item) in remaining.iter().enumerate() {
            assignments[item] = outcome.assignments[j];
        }
    }
    build_groups(ds, targets, &assignments)
}

// ---------------------------------------------------------------------------
// Sampling

/// A sampled item and the group it actually came from (differs from the
/// requested group when exhaustion forced a fallback).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemDraw {
    pub item: usize,
    pub group: usize,
}

/// Uniform draw from a group minus `forbidden`. An exhausted group falls back
/// to a uniformly random non-exhausted one; the draw records which group
/// actually supplied the item.
pub fn sample_item<R: Rng>(
    groups: &ItemGroups,
    group_id: usize,
    forbidden: &HashSet<usize>,
    rng: &mut R,
) -> Result<ItemDraw> {
    if group_id >= groups.n_groups() {
        return Err(Error::InvalidConfig(format!(
            "group id {group_id} out of range 0..{}",
            groups.n_groups()
        )));
    }
    if let Some(item) = draw_from(groups.group(group_id), forbidden, rng) {
        return Ok(ItemDraw {
            item,
            group: group_id,
        });
    }
    let open: Vec<usize> = (0..groups.n_groups())
        .filter(|&g| groups.group(g).iter().any(|i| !forbidden.contains(i)))
        .collect();
    if open.is_empty() {
        return Err(Error::GroupsExhausted);
    }
    let g = open[rng.random_range(0..open.len())];
    let item = draw_from(groups.group(g), forbidden, rng).expect("group verified non-exhausted");
    Ok(ItemDraw { item, group: g })
}

fn draw_from<R: Rng>(group: &[usize], forbidden: &HashSet<usize>, rng: &mut R) -> Option<usize> {
    let candidates: Vec<usize> = group
        .iter()
        .copied()
        .filter(|i| !forbidden.contains(i))
        .collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.random_range(0..candidates.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_matrix_reconstructs_exactly() {
        let entries = [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)];
        let f = nmf(&entries, 2, 2, 1, 500, 3).unwrap();
        let final_err = f.errors.last().unwrap().sqrt();
        assert!(final_err < 1e-6, "residual {final_err}");
        assert!(f.w.iter().chain(&f.h).all(|&x| x >= 0.0));
    }

    #[test]
    fn reconstruction_error_never_increases_across_seeds() {
        use rand::Rng;
        for seed in 0..100 {
            let mut rng = substream(seed, "nmf-test");
            let entries: Vec<(usize, usize, f64)> = (0..6)
                .flat_map(|r| (0..5).map(move |c| (r, c)))
                .map(|(r, c)| (r, c, 0.0))
                .collect();
            let entries: Vec<(usize, usize, f64)> = entries
                .into_iter()
                .map(|(r, c, _)| (r, c, rng.random_range(0.0..2.0)))
                .collect();
            let f = nmf(&entries, 6, 5, 2, 30, seed).unwrap();
            for pair in f.errors.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-12,
                    "seed {seed}: error rose {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn full_rank_fits_at_least_as_well_as_rank_one() {
        let entries = [
            (0, 0, 1.0),
            (0, 1, 0.2),
            (1, 0, 0.1),
            (1, 1, 2.0),
            (2, 0, 1.5),
            (2, 2, 0.7),
        ];
        let lo = nmf(&entries, 3, 3, 1, 300, 1).unwrap();
        let hi = nmf(&entries, 3, 3, 3, 300, 1).unwrap();
        assert!(hi.errors.last().unwrap() <= lo.errors.last().unwrap());
    }

    #[test]
    fn separated_blobs_split_cleanly() {
        let points = [0.0, 0.1, 10.0, 10.1];
        let out = kmeans(&points, 1, 2, 5, 50).unwrap();
        assert_eq!(out.assignments[0], out.assignments[1]);
        assert_eq!(out.assignments[2], out.assignments[3]);
        assert_ne!(out.assignments[0], out.assignments[2]);
    }

    #[test]
    fn single_cluster_holds_everything() {
        let points = [1.0, 5.0, -3.0, 8.0];
        let out = kmeans(&points, 1, 1, 0, 20).unwrap();
        assert!(out.assignments.iter().all(|&g| g == 0));
    }

    #[test]
    fn converged_wcss_beats_random_assignments() {
        use rand::Rng;
        let mut rng = substream(12, "kmeans-test");
        let points: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = 3;
        let out = kmeans(&points, 2, c, 4, 100).unwrap();
        for _ in 0..1000 {
            let random: Vec<usize> = (0..12).map(|_| rng.random_range(0..c)).collect();
            let w = assignment_wcss(&points, 2, &random, c);
            assert!(out.wcss <= w + 1e-9, "kmeans {} vs random {}", out.wcss, w);
        }
    }

    fn four_item_fixture() -> (Dataset, TargetSpec) {
        // target user 0 trains on item 1 only
        let ds = Dataset::synthetic(vec![vec![1, 2, 3], vec![2, 3, 0]], 4).unwrap();
        let spec = TargetSpec {
            target_items: vec![0],
            target_users: vec![0],
        };
        (ds, spec)
    }

    #[test]
    fn construction_example_keeps_specials_and_clusters_apart() {
        let (ds, spec) = four_item_fixture();
        // clusters {2} and {3}; specials carry arbitrary labels
        let groups = build_groups(&ds, &spec, &[0, 0, 0, 1]).unwrap();
        assert_eq!(groups.groups(), &[vec![0], vec![1], vec![2], vec![3]]);
        groups.check_partition().unwrap();
    }

    #[test]
    fn target_membership_beats_history_membership() {
        let ds = Dataset::synthetic(vec![vec![0, 1, 2], vec![1, 2, 3]], 4).unwrap();
        let spec = TargetSpec {
            target_items: vec![0],
            target_users: vec![0], // trains on {0}: the target is also history
        };
        let groups = build_groups(&ds, &spec, &[0, 0, 0, 0]).unwrap();
        assert_eq!(groups.group(0), &[0]);
        assert!(groups.groups().iter().skip(1).all(|g| !g.contains(&0)));
    }

    #[test]
    fn all_items_as_targets_leaves_a_single_group() {
        let ds = Dataset::synthetic(vec![vec![0, 1, 2], vec![1, 2, 0]], 3).unwrap();
        let spec = TargetSpec {
            target_items: vec![0, 1, 2],
            target_users: vec![0],
        };
        let groups = build_groups(&ds, &spec, &[0, 1, 0]).unwrap();
        assert_eq!(groups.n_groups(), 1);
        assert_eq!(groups.group(0), &[0, 1, 2]);
        assert!(!groups.has_history_group());
    }

    #[test]
    fn empty_target_set_is_fatal() {
        let (ds, _) = four_item_fixture();
        let spec = TargetSpec {
            target_items: vec![],
            target_users: vec![0],
        };
        assert!(matches!(
            build_groups(&ds, &spec, &[0; 4]),
            Err(Error::EmptyTargetGroup)
        ));
    }

    #[test]
    fn full_group_pipeline_is_deterministic_and_partitions() {
        let seqs = (0..12)
            .map(|u| vec![u % 6, (u + 1) % 6, (u + 2) % 6, (u + 3) % 6, (u + 4) % 6])
            .collect();
        let ds = Dataset::synthetic(seqs, 6).unwrap();
        let spec = TargetSpec {
            target_items: vec![5],
            target_users: vec![0],
        };
        let cfg = ActionSpaceConfig {
            nmf_rank: 3,
            nmf_iters: 50,
            n_clusters: 2,
            kmeans_iters: 20,
        };
        let a = build_item_groups(&ds, &spec, &cfg, 9).unwrap();
        let b = build_item_groups(&ds, &spec, &cfg, 9).unwrap();
        assert_eq!(a, b);
        a.check_partition().unwrap();
        assert_eq!(a.group(0), &[5]);
        let covered: usize = a.groups().iter().map(Vec::len).sum();
        assert_eq!(covered, 6); // specials + clusters cover the catalog
    }

    fn sampling_groups() -> ItemGroups {
        ItemGroups {
            groups: vec![vec![5], vec![6], vec![1, 2, 3, 4]],
            has_history_group: true,
            n_items: 7,
        }
    }

    #[test]
    fn singleton_and_exclusion_draws() {
        let groups = sampling_groups();
        let mut rng = substream(0, "sample-test");
        let d = sample_item(&groups, 0, &HashSet::new(), &mut rng).unwrap();
        assert_eq!(d, ItemDraw { item: 5, group: 0 });
        let forbidden: HashSet<usize> = [1, 2, 4].into_iter().collect();
        let d = sample_item(&groups, 2, &forbidden, &mut rng).unwrap();
        assert_eq!(d, ItemDraw { item: 3, group: 2 });
    }

    #[test]
    fn exhausted_group_falls_back_to_an_open_one() {
        let groups = sampling_groups();
        let mut rng = substream(1, "sample-test");
        let forbidden: HashSet<usize> = [5, 1, 2, 3, 4].into_iter().collect();
        let d = sample_item(&groups, 0, &forbidden, &mut rng).unwrap();
        assert_eq!(d, ItemDraw { item: 6, group: 1 });
        let all: HashSet<usize> = [5, 6, 1, 2, 3, 4].into_iter().collect();
        assert!(matches!(
            sample_item(&groups, 0, &all, &mut rng),
            Err(Error::GroupsExhausted)
        ));
    }

    #[test]
    fn draws_are_uniform_within_a_group() {
        let groups = sampling_groups();
        let mut rng = substream(2, "sample-test");
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            let d = sample_item(&groups, 2, &HashSet::new(), &mut rng).unwrap();
            counts[d.item] += 1;
        }
        // binomial 3 sigma around p = 1/4
        let sigma = (10_000.0 * 0.25 * 0.75_f64).sqrt();
        for &item in &[1, 2, 3, 4] {
            let dev = (counts[item] as f64 - 2500.0).abs();
            assert!(dev <= 3.0 * sigma, "item {item}: count {}", counts[item]);
        }
    }
}
