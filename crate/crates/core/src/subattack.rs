//! SubAttack: split the cloud into `K` disjoint subsets, then at every
//! iteration score all `2^K - 1` non-empty subset combinations by
//! `S = dL - lambda * D` and commit the weighted update only on the winner.
//!
//! Scoring reuses one gradient per iteration. Each candidate's tentative
//! cloud differs from the current one only on covered points, so
//! [`select_best_combination`] caches per-subset feature maxima and
//! nearest-neighbour minima and assembles every candidate's logits and
//! distortion from them. Max and min are exact and the sums run in the same
//! index order as the direct metrics, so the cached scores equal
//! [`score_combination`] bit for bit.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{drive, update_point, AttackConfig, AttackResult, IterationView};
use crate::classifier::{cw_loss, Classifier};
use crate::cloud::{sq_dist, Point3, PointCloud};
use crate::metrics::{composite_distortion, nearest_sq, MetricWeights};
use crate::{Error, Result, Scalar};

/// Largest supported number of subsets (`2^20 - 1` candidates).
pub const MAX_SUBSETS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionStrategy {
    Random,
    Hash,
}

impl PartitionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PartitionStrategy::Random => "random",
            PartitionStrategy::Hash => "hash",
        }
    }
}

impl FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PartitionStrategy::Random),
            "hash" => Ok(PartitionStrategy::Hash),
            _ => Err(Error::invalid(format!("unknown partition strategy `{s}`"))),
        }
    }
}

/// `K` disjoint index subsets covering `0..N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    subsets: Vec<Vec<usize>>,
    assignment: Vec<usize>,
    strategy: PartitionStrategy,
    seed: u64,
}

impl Partition {
    fn from_assignment(assignment: Vec<usize>, k: usize, strategy: PartitionStrategy, seed: u64) -> Self {
        let mut subsets = vec![Vec::new(); k];
        for (i, &s) in assignment.iter().enumerate() {
            subsets[s].push(i);
        }
        Self {
            subsets,
            assignment,
            strategy,
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.subsets.len()
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Point indices of each subset, ascending.
    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    /// Subset index of every point.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of non-empty combinations, `2^K - 1`.
    pub fn combination_count(&self) -> usize {
        (1usize << self.k()) - 1
    }

    pub fn combinations(&self) -> impl Iterator<Item = Combination> {
        (1..=self.combination_count() as u32).map(Combination)
    }

    pub fn covered_count(&self, combination: Combination) -> usize {
        combination.subsets().map(|s| self.subsets[s].len()).sum()
    }

    /// `M_i = 1` iff point `i` belongs to a subset of `combination`.
    pub fn mask(&self, combination: Combination) -> Vec<bool> {
        self.assignment.iter().map(|&s| combination.contains(s)).collect()
    }
}

/// Splits a seeded random permutation of `0..n` into `k` slices; the first
/// `n mod k` receive `n / k + 1` points, the rest `n / k`.
pub fn partition_random(n: usize, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if k > MAX_SUBSETS {
        return Err(Error::invalid(format!("at most {MAX_SUBSETS} subsets are supported, got {k}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut assignment = vec![0; n];
    let mut cursor = 0;
    for s in 0..k {
        let size = base + usize::from(s < extra);
        for &i in &perm[cursor..cursor + size] {
            assignment[i] = s;
        }
        cursor += size;
    }
    Ok(Partition::from_assignment(assignment, k, PartitionStrategy::Random, seed))
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Assigns each point to `hash(cell) mod k`, where `cell` is the point's
/// grid cell relative to the cloud's lowest occupied cell. Subsets may be
/// unequal or empty.
pub fn partition_hash<T: Scalar>(cloud: &PointCloud<T>, k: usize, grid: T) -> Result<Partition> {
    if k == 0 || k > MAX_SUBSETS {
        return Err(Error::invalid(format!("need 1 <= k <= {MAX_SUBSETS}, got {k}")));
    }
    if !(grid > T::zero()) {
        return Err(Error::invalid("hash grid cell size must be positive"));
    }
    let cells: Vec<[i64; 3]> = cloud
        .points()
        .iter()
        .map(|p| p.map(|c| (c / grid).floor().to_i64().unwrap_or(0)))
        .collect();
    let mut lo = cells[0];
    for c in &cells {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
        }
    }
    let assignment = cells
        .iter()
        .map(|c| {
            let rel = [0, 1, 2].map(|a| (c[a] - lo[a]) as u64);
            (mix64(rel[0] ^ mix64(rel[1] ^ mix64(rel[2]))) % k as u64) as usize
        })
        .collect();
    Ok(Partition::from_assignment(assignment, k, PartitionStrategy::Hash, 0))
}

/// Non-empty set of subset indices, as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combination(pub u32);

impl Combination {
    pub fn contains(self, subset: usize) -> bool {
        self.0 >> subset & 1 == 1
    }

    pub fn subsets(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&s| self.contains(s))
    }
}

/// Step shared by every candidate of one iteration.
#[derive(Debug, Clone, Copy)]
pub struct StepProposal<'a, T> {
    pub eta: T,
    pub weights: &'a [T],
    pub directions: &'a [Point3<T>],
}

/// Everything needed to score candidates in one iteration.
#[derive(Debug, Clone, Copy)]
pub struct CandidateContext<'a, T> {
    pub model: &'a Classifier<T>,
    pub original: &'a PointCloud<T>,
    pub current: &'a PointCloud<T>,
    pub label: usize,
    pub kappa: T,
    pub epsilon: T,
    pub step: StepProposal<'a, T>,
    pub lambda: T,
    pub metric_weights: MetricWeights<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinationScore<T> {
    pub combination: Combination,
    /// `L(current) - L(tentative)`.
    pub delta_loss: T,
    /// Composite distortion of the tentative cloud against the original.
    pub distortion: T,
    /// `delta_loss - lambda * distortion`.
    pub score: T,
    pub covered: usize,
}

impl<T: Scalar> CombinationScore<T> {
    pub fn new(combination: Combination, delta_loss: T, distortion: T, lambda: T, covered: usize) -> Self {
        Self {
            combination,
            delta_loss,
            distortion,
            score: delta_loss - lambda * distortion,
            covered,
        }
    }

    /// Winner order: higher score, then fewer covered points, then lower bitmask.
    pub fn beats(&self, other: &Self) -> bool {
        if self.score != other.score {
            return self.score > other.score;
        }
        if self.covered != other.covered {
            return self.covered < other.covered;
        }
        self.combination < other.combination
    }
}

fn check_combination(partition: &Partition, combination: Combination) -> Result<()> {
    if combination.0 == 0 {
        return Err(Error::invalid("empty subset combination"));
    }
    if combination.0 >> partition.k() != 0 {
        return Err(Error::invalid(format!(
            "combination {:#b} references subsets beyond k = {}",
            combination.0,
            partition.k()
        )));
    }
    Ok(())
}

fn check_context<T: Scalar>(ctx: &CandidateContext<'_, T>, partition: &Partition) -> Result<()> {
    let n = ctx.current.len();
    if partition.n() != n || ctx.original.len() != n || ctx.step.weights.len() != n || ctx.step.directions.len() != n {
        return Err(Error::invalid("partition, clouds and step must all cover the same points"));
    }
    Ok(())
}

/// Scores one combination directly: builds the masked tentative cloud, runs a
/// forward pass and measures the distortion against the original.
pub fn score_combination<T: Scalar>(
    ctx: &CandidateContext<'_, T>,
    partition: &Partition,
    combination: Combination,
) -> Result<CombinationScore<T>> {
    check_combination(partition, combination)?;
    check_context(ctx, partition)?;
    let mask = partition.mask(combination);
    let tentative = crate::attack::apply_update(
        ctx.current,
        ctx.original,
        ctx.step.eta,
        ctx.step.weights,
        ctx.step.directions,
        Some(&mask),
        ctx.epsilon,
    )?;
    let before = ctx.model.loss(ctx.current, ctx.label, ctx.kappa);
    let after = ctx.model.loss(&tentative, ctx.label, ctx.kappa);
    let d = composite_distortion(ctx.original, &tentative, &ctx.metric_weights)?;
    Ok(CombinationScore::new(
        combination,
        before - after,
        d.d_composite,
        ctx.lambda,
        partition.covered_count(combination),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub winner: CombinationScore<T>,
    pub mask: Vec<bool>,
    /// Logits of the winner's tentative cloud.
    pub logits: Vec<T>,
    pub candidates_scored: usize,
}

/// Per-iteration cache of everything a candidate's score depends on.
struct CandidateCache<T> {
    n: usize,
    k: usize,
    /// Per subset, channel-wise feature max with points at current / tentative positions.
    feat_current: Vec<Option<Vec<T>>>,
    feat_tentative: Vec<Option<Vec<T>>>,
    /// Per point, squared distance to the nearest original point.
    nn_current: Vec<T>,
    nn_tentative: Vec<T>,
    /// `[j * k + s]`: min squared distance from original point `j` to subset `s`.
    min_current: Vec<T>,
    min_tentative: Vec<T>,
    /// Squared per-coordinate offsets from the original.
    sq_current: Vec<Point3<T>>,
    sq_tentative: Vec<Point3<T>>,
}

impl<T: Scalar> CandidateCache<T> {
    fn build(ctx: &CandidateContext<'_, T>, partition: &Partition) -> Self {
        let n = ctx.current.len();
        let k = partition.k();
        let cur = ctx.current.points();
        let orig = ctx.original.points();
        let tent: Vec<Point3<T>> = (0..n)
            .map(|i| {
                update_point(
                    &cur[i],
                    &orig[i],
                    ctx.step.eta,
                    ctx.step.weights[i],
                    &ctx.step.directions[i],
                    ctx.epsilon,
                )
            })
            .collect();
        let moved: Vec<bool> = (0..n).map(|i| tent[i] != cur[i]).collect();

        let model = ctx.model;
        let mut scratch = model.scratch();
        let mut feat_current: Vec<Option<Vec<T>>> = vec![None; k];
        let mut feat_tentative: Vec<Option<Vec<T>>> = vec![None; k];
        let fold_max = |slot: &mut Option<Vec<T>>, f: &[T]| match slot {
            None => *slot = Some(f.to_vec()),
            Some(m) => {
                for (a, &b) in m.iter_mut().zip(f) {
                    if b > *a {
                        *a = b;
                    }
                }
            }
        };
        for (s, members) in partition.subsets().iter().enumerate() {
            for &i in members {
                model.point_features(&cur[i], &mut scratch);
                fold_max(&mut feat_current[s], &scratch.h2);
                if moved[i] {
                    model.point_features(&tent[i], &mut scratch);
                    fold_max(&mut feat_tentative[s], &scratch.h2);
                } else {
                    fold_max(&mut feat_tentative[s], &scratch.h2);
                }
            }
        }

        let nn_current: Vec<T> = cur.iter().map(|p| nearest_sq(p, orig)).collect();
        let nn_tentative: Vec<T> = (0..n)
            .map(|i| if moved[i] { nearest_sq(&tent[i], orig) } else { nn_current[i] })
            .collect();

        let mut min_current = vec![T::infinity(); n * k];
        let mut min_tentative = vec![T::infinity(); n * k];
        for (j, o) in orig.iter().enumerate() {
            let row_c = &mut min_current[j * k..(j + 1) * k];
            let row_t = &mut min_tentative[j * k..(j + 1) * k];
            for i in 0..n {
                let s = partition.assignment()[i];
                let dc = sq_dist(o, &cur[i]);
                row_c[s] = row_c[s].min(dc);
                let dt = if moved[i] { sq_dist(o, &tent[i]) } else { dc };
                row_t[s] = row_t[s].min(dt);
            }
        }

        let sq = |p: &Point3<T>, o: &Point3<T>| {
            let d = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
            [d[0] * d[0], d[1] * d[1], d[2] * d[2]]
        };
        let sq_current: Vec<Point3<T>> = (0..n).map(|i| sq(&cur[i], &orig[i])).collect();
        let sq_tentative: Vec<Point3<T>> = (0..n).map(|i| sq(&tent[i], &orig[i])).collect();

        Self {
            n,
            k,
            feat_current,
            feat_tentative,
            nn_current,
            nn_tentative,
            min_current,
            min_tentative,
            sq_current,
            sq_tentative,
        }
    }

    fn pooled(&self, combination: Option<Combination>) -> Vec<T> {
        let mut pooled: Option<Vec<T>> = None;
        for s in 0..self.k {
            let src = if combination.is_some_and(|c| c.contains(s)) {
                &self.feat_tentative[s]
            } else {
                &self.feat_current[s]
            };
            if let Some(f) = src {
                match pooled.as_mut() {
                    None => pooled = Some(f.clone()),
                    Some(p) => {
                        for (a, &b) in p.iter_mut().zip(f) {
                            if b > *a {
                                *a = b;
                            }
                        }
                    }
                }
            }
        }
        pooled.expect("partition covers at least one point")
    }

    fn distortion(&self, partition: &Partition, combination: Combination, weights: &MetricWeights<T>) -> T {
        let assignment = partition.assignment();
        let covered = |i: usize| combination.contains(assignment[i]);
        let count = T::of(self.n as f64);

        // Original -> adversarial directed mean, then the reverse.
        let mut orig_to_adv = T::zero();
        for j in 0..self.n {
            let row_c = &self.min_current[j * self.k..(j + 1) * self.k];
            let row_t = &self.min_tentative[j * self.k..(j + 1) * self.k];
            let mut m = T::infinity();
            for s in 0..self.k {
                let v = if combination.contains(s) { row_t[s] } else { row_c[s] };
                m = m.min(v);
            }
            orig_to_adv += m;
        }
        let mut adv_to_orig = T::zero();
        let mut haus = T::zero();
        let mut l2 = T::zero();
        for i in 0..self.n {
            let (nn, sq) = if covered(i) {
                (self.nn_tentative[i], &self.sq_tentative[i])
            } else {
                (self.nn_current[i], &self.sq_current[i])
            };
            adv_to_orig += nn;
            haus = haus.max(nn);
            for &v in sq {
                l2 += v;
            }
        }
        let d_c = T::of(0.5) * (orig_to_adv / count + adv_to_orig / count);
        weights.combine(d_c, haus, l2.sqrt())
    }
}

/// Scores every non-empty combination and returns the winner under the
/// order of [`CombinationScore::beats`]. Combinations that cover no point
/// (possible only with empty hash subsets) are not candidates.
pub fn select_best_combination<T: Scalar>(ctx: &CandidateContext<'_, T>, partition: &Partition) -> Result<Selection<T>> {
    check_context(ctx, partition)?;
    let cache = CandidateCache::build(ctx, partition);
    let model = ctx.model;
    let current_loss = cw_loss(&model.head(&cache.pooled(None)).1, ctx.label, ctx.kappa);

    let mut best: Option<(CombinationScore<T>, Vec<T>)> = None;
    let mut scored = 0;
    for combination in partition.combinations() {
        let covered = partition.covered_count(combination);
        if covered == 0 {
            continue;
        }
        scored += 1;
        let logits = model.head(&cache.pooled(Some(combination))).1;
        let loss = cw_loss(&logits, ctx.label, ctx.kappa);
        let distortion = cache.distortion(partition, combination, &ctx.metric_weights);
        let candidate = CombinationScore::new(combination, current_loss - loss, distortion, ctx.lambda, covered);
        if best.as_ref().is_none_or(|(b, _)| candidate.beats(b)) {
            best = Some((candidate, logits));
        }
    }
    let (winner, logits) = best.expect("at least one combination covers a point");
    Ok(Selection {
        mask: partition.mask(winner.combination),
        winner,
        logits,
        candidates_scored: scored,
    })
}

/// Draws the attack's partition from its config.
pub fn partition_for<T: Scalar>(cloud: &PointCloud<T>, config: &AttackConfig<T>) -> Result<Partition> {
    match config.partition {
        PartitionStrategy::Random => partition_random(cloud.len(), config.k, config.seed),
        PartitionStrategy::Hash => partition_hash(cloud, config.k, config.hash_grid),
    }
}

/// Runs SubAttack with one partition drawn for this attack.
pub fn run_subattack<T: Scalar>(model: &Classifier<T>, cloud: &PointCloud<T>, config: &AttackConfig<T>) -> Result<AttackResult<T>> {
    run_subattack_observed(model, cloud, config, |_| {})
}

pub fn run_subattack_observed<T: Scalar, F>(
    model: &Classifier<T>,
    cloud: &PointCloud<T>,
    config: &AttackConfig<T>,
    mut observer: F,
) -> Result<AttackResult<T>>
where
    F: FnMut(IterationView<'_, T>),
{
    config.validate()?;
    let partition = partition_for(cloud, config)?;
    drive(model, cloud, config, Some(&partition), &mut observer)
}
