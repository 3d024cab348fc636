//! Success rates, judge aggregation, specialist normalization and permutation tests.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.96;
/// Exact enumeration is used up to this many relabelings.
pub const EXHAUSTIVE_LIMIT: u128 = 100_000;
/// Tolerance when comparing permuted statistics against the observed one.
pub const STAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("paired test needs equal lengths, got {0} and {1}")]
    Unpaired(usize, usize),
    #[error("duplicate rating from judge {judge} for episode {episode}")]
    DuplicateJudgment { episode: String, judge: String },
    #[error("judgments for episodes {0} and {1} mixed in one aggregation")]
    MixedEpisodes(String, String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Rate and normal-approximation 95% half-width.
pub fn success_rate(successes: usize, n: usize) -> Result<(f64, f64), StatsError> {
    if n == 0 {
        return Err(StatsError::Empty);
    }
    let p = successes as f64 / n as f64;
    let half = Z95 * (p * (1.0 - p) / n as f64).sqrt();
    // Keep rate ± half inside [0, 1].
    let half = half.min(p).min(1.0 - p).max(0.0);
    Ok((p, half))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    Success,
    Failure,
}

/// One judge's verdict on one recorded episode, as uploaded by the browser client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub episode_id: String,
    pub judge_id: String,
    pub rating: Rating,
    #[serde(default)]
    pub note: String,
}

/// Strict majority of success ratings; ties fail.
pub fn aggregate_judgments(records: &[JudgmentRecord]) -> Result<bool, StatsError> {
    let first = records.first().ok_or(StatsError::Empty)?;
    let mut judges = BTreeSet::new();
    let mut yes = 0usize;
    for r in records {
        if r.episode_id != first.episode_id {
            return Err(StatsError::MixedEpisodes(first.episode_id.clone(), r.episode_id.clone()));
        }
        if !judges.insert(r.judge_id.as_str()) {
            return Err(StatsError::DuplicateJudgment {
                episode: r.episode_id.clone(),
                judge: r.judge_id.clone(),
            });
        }
        if r.rating == Rating::Success {
            yes += 1;
        }
    }
    Ok(2 * yes > records.len())
}

/// Parses one JSON record per line (blank lines skipped).
pub fn parse_judgments(jsonl: &str) -> Result<Vec<JudgmentRecord>, StatsError> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StatsError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Groups records by episode and aggregates each.
pub fn aggregate_all(records: &[JudgmentRecord]) -> Result<BTreeMap<String, bool>, StatsError> {
    let mut by_episode: BTreeMap<&str, Vec<JudgmentRecord>> = BTreeMap::new();
    for r in records {
        by_episode.entry(&r.episode_id).or_default().push(r.clone());
    }
    by_episode
        .into_iter()
        .map(|(ep, rs)| Ok((ep.to_string(), aggregate_judgments(&rs)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    /// Percent of the specialist's rate, per environment.
    pub per_env: BTreeMap<String, f64>,
    /// Environments dropped because the specialist never succeeded.
    pub excluded: Vec<String>,
    /// Unweighted mean over included environments.
    pub aggregate: Option<f64>,
}

pub fn normalize_vs_specialist(
    agent: &BTreeMap<String, f64>,
    specialist: &BTreeMap<String, f64>,
) -> Normalized {
    let mut per_env = BTreeMap::new();
    let mut excluded = Vec::new();
    for (env, &s) in specialist {
        let Some(&a) = agent.get(env) else { continue };
        if s <= 0.0 {
            log::warn!("specialist rate is zero in {env}; excluded from normalization");
            excluded.push(env.clone());
        } else {
            per_env.insert(env.clone(), 100.0 * a / s);
        }
    }
    let aggregate = (!per_env.is_empty()).then(|| per_env.values().sum::<f64>() / per_env.len() as f64);
    Normalized {
        per_env,
        excluded,
        aggregate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMode {
    /// Independent groups: relabel the pooled scores.
    #[default]
    Pooled,
    /// Per-task differences: flip signs.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p: f64,
    pub observed: f64,
    pub exhaustive: bool,
    /// Relabelings evaluated.
    pub count: u64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `n choose k`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Two-sided permutation test on the difference of means.
///
/// Exact when the number of relabelings is at most [`EXHAUSTIVE_LIMIT`], where
/// `p = #{|stat| >= |obs|} / total`. Otherwise Monte Carlo with
/// `p = (1 + #{|stat| >= |obs|}) / (1 + n_resamples)`.
pub fn permutation_test(
    a: &[f64],
    b: &[f64],
    n_resamples: usize,
    seed: u64,
    mode: PermutationMode,
) -> Result<PermutationResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    match mode {
        PermutationMode::Pooled => Ok(pooled(a, b, n_resamples, seed)),
        PermutationMode::Paired => {
            if a.len() != b.len() {
                return Err(StatsError::Unpaired(a.len(), b.len()));
            }
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            Ok(paired(&d, n_resamples, seed))
        }
    }
}

fn pooled(a: &[f64], b: &[f64], n_resamples: usize, seed: u64) -> PermutationResult {
    let pool: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pool.len();
    let na = a.len();
    let total_sum: f64 = pool.iter().sum();
    let stat = |sum_a: f64| sum_a / na as f64 - (total_sum - sum_a) / (n - na) as f64;
    let observed = mean(a) - mean(b);
    let thresh = observed.abs() - STAT_TOL;
    let total = binomial(n, na);
    if total <= EXHAUSTIVE_LIMIT {
        let mut hits = 0u64;
        let mut count = 0u64;
        for idx in (0..n).combinations(na) {
            let s: f64 = idx.iter().map(|&i| pool[i]).sum();
            if stat(s).abs() >= thresh {
                hits += 1;
            }
            count += 1;
        }
        return PermutationResult {
            p: hits as f64 / count as f64,
            observed,
            exhaustive: true,
            count,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = pool.clone();
    let mut hits = 0u64;
    for _ in 0..n_resamples {
        work.shuffle(&mut rng);
        let s: f64 = work[..na].iter().sum();
        if stat(s).abs() >= thresh {
            hits += 1;
        }
    }
    PermutationResult {
        p: (1 + hits) as f64 / (1 + n_resamples) as f64,
        observed,
        exhaustive: false,
        count: n_resamples as u64,
    }
}

fn paired(d: &[f64], n_resamples: usize, seed: u64) -> PermutationResult {
    let n = d.len();
    let observed = mean(d);
    let thresh = observed.abs() - STAT_TOL;
    if n < 64 && (1u128 << n) <= EXHAUSTIVE_LIMIT {
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|mask| {
                let s: f64 = d
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| if mask >> i & 1 == 1 { -x } else { x })
                    .sum();
                (s / n as f64).abs() >= thresh
            })
            .count() as u64;
        return PermutationResult {
            p: hits as f64 / total as f64,
            observed,
            exhaustive: true,
            count: total,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..n_resamples {
        let s: f64 = d.iter().map(|&x| if rng.gen::<bool>() { -x } else { x }).sum();
        if (s / n as f64).abs() >= thresh {
            hits += 1;
        }
    }
    PermutationResult {
        p: (1 + hits) as f64 / (1 + n_resamples) as f64,
        observed,
        exhaustive: false,
        count: n_resamples as u64,
    }
}

/// Permutation test forced into Monte Carlo mode, for checking the exact path.
pub fn permutation_test_monte_carlo(a: &[f64], b: &[f64], n_resamples: usize, seed: u64) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let pool: Vec<f64> = a.iter().chain(b).copied().collect();
    let na = a.len();
    let observed = (mean(a) - mean(b)).abs() - STAT_TOL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = pool;
    let mut hits = 0u64;
    for _ in 0..n_resamples {
        work.shuffle(&mut rng);
        if (mean(&work[..na]) - mean(&work[na..])).abs() >= observed {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_resamples) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_small() {
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(10, 0), 1);
        assert_eq!(binomial(52, 5), 2_598_960);
    }

    #[test]
    fn clip_keeps_interval_in_range() {
        let (p, h) = success_rate(1, 3).unwrap();
        assert!(p - h >= 0.0 && p + h <= 1.0);
    }
}
