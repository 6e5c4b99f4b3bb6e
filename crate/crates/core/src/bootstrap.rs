//! Weighted resampling inference.
//!
//! Each replicate redraws every quarter's sample separately: `N` draws
//! with replacement, selection probability proportional to the survey
//! weight, and every drawn record enters re-estimation with weight 1.
//! Persons are resampled independently, so household clustering is
//! ignored and standard errors are, if anything, understated.
//!
//! Replicate `k` draws from ChaCha8 stream `k` of the master seed, and
//! replicate values are aggregated in index order, so results do not
//! depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_distr::Binomial;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::BootstrapError;
use crate::estimator::{EstimationPanel, Move, Observation, QuarterSample};

/// Fewest finite replicates accepted for standard errors and intervals.
pub const MIN_REPLICATES: usize = 100;
/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    /// Re-estimate every matrix and refit every forecasting model.
    #[default]
    FullPipeline,
    /// Re-estimate the observed matrices only; forecasts stay at their
    /// point values.
    EstimationOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub master_seed: u64,
    pub mode: BootstrapMode,
    pub ci_level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 999,
            master_seed: 0,
            mode: BootstrapMode::FullPipeline,
            ci_level: 0.95,
        }
    }
}

impl BootstrapConfig {
    pub fn new(replicates: usize, master_seed: u64) -> Self {
        Self {
            replicates,
            master_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.replicates < MIN_REPLICATES {
            return Err(BootstrapError::InvalidConfig(format!(
                "{} replicates requested, at least {MIN_REPLICATES} needed",
                self.replicates
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(BootstrapError::InvalidConfig(format!(
                "ci_level {} outside (0, 1)",
                self.ci_level
            )));
        }
        Ok(())
    }

    /// Two-sided test level matching the interval.
    pub fn alpha(&self) -> f64 {
        1.0 - self.ci_level
    }

    /// Generator for replicate `k`.
    pub fn rng(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(k as u64);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: f64,
    /// Replicates that produced a finite value.
    pub b_effective: usize,
    pub ci_level: f64,
}

impl BootstrapResult {
    /// Rejects `value = 0` at level `alpha` by the percentile p-value.
    pub fn significant_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    pub fn significant(&self) -> bool {
        self.significant_at(1.0 - self.ci_level)
    }
}

/// Draws `items.len()` items with replacement, proportional to `weight`.
pub fn resample<T: Clone, R: rand::Rng>(
    items: &[T],
    weight: impl Fn(&T) -> f64,
    rng: &mut R,
) -> Result<Vec<T>, BootstrapError> {
    if items.is_empty() {
        return Err(BootstrapError::EmptySample);
    }
    let dist = WeightedIndex::new(items.iter().map(&weight))
        .map_err(|e| BootstrapError::InvalidConfig(format!("bad sampling weights: {e}")))?;
    Ok((0..items.len()).map(|_| items[dist.sample(rng)].clone()).collect())
}

/// Multinomial counts of `n` draws over categories with the given masses,
/// by sequential conditional binomials.
fn multinomial<R: rand::Rng>(n: u64, masses: &[f64], rng: &mut R) -> Vec<u64> {
    let mut left = n;
    let mut mass_left: f64 = masses.iter().sum();
    let mut out = Vec::with_capacity(masses.len());
    for (c, m) in masses.iter().enumerate() {
        let draw = if left == 0 {
            0
        } else if c + 1 == masses.len() {
            left
        } else {
            let p = (m / mass_left).clamp(0.0, 1.0);
            Binomial::new(left, p).expect("p in [0, 1]").sample(rng)
        };
        out.push(draw);
        left -= draw;
        mass_left -= m;
    }
    out
}

/// Weight-proportional resampling of `n` records with unit weights,
/// given the total weight per distinct record type. Records of one type
/// are interchangeable once reweighted to 1, so drawing type counts from
/// the multinomial has the same law as drawing records one by one.
fn resample_types<K: Copy + Ord, T>(
    items: impl Iterator<Item = (K, f64)>,
    n: usize,
    make: impl Fn(K) -> T,
    rng: &mut impl rand::Rng,
) -> Vec<T> {
    let mut mass: BTreeMap<K, f64> = BTreeMap::new();
    for (k, w) in items {
        *mass.entry(k).or_default() += w;
    }
    let masses: Vec<f64> = mass.values().copied().collect();
    let counts = multinomial(n as u64, &masses, rng);
    let mut out = Vec::with_capacity(n);
    for (k, c) in mass.keys().zip(counts) {
        out.extend((0..c).map(|_| make(*k)));
    }
    out
}

/// One resampled quarter: observations and linked moves are drawn
/// separately, as many as there were, all ending up with unit weights.
/// Empty parts stay empty.
pub fn resample_quarter<R: rand::Rng>(sample: &QuarterSample, rng: &mut R) -> QuarterSample {
    let observations = resample_types(
        sample.observations.iter().map(|o| (o.state, o.weight)),
        sample.observations.len(),
        |state| Observation { state, weight: 1.0 },
        rng,
    );
    let moves = resample_types(
        sample.moves.iter().map(|m| ((m.from, m.to), m.weight)),
        sample.moves.len(),
        |(from, to)| Move { from, to, weight: 1.0 },
        rng,
    );
    QuarterSample { observations, moves }
}

/// Resamples every quarter independently, in chronological order.
pub fn resample_panel<R: rand::Rng>(panel: &EstimationPanel, rng: &mut R) -> EstimationPanel {
    EstimationPanel {
        space: panel.space.clone(),
        quarters: panel
            .quarters
            .iter()
            .map(|(q, s)| (*q, resample_quarter(s, rng)))
            .collect(),
    }
}

/// Percentile summary of replicate values around a point estimate.
///
/// `se` uses the divisor `B`. With `k = floor((B + 1) * alpha / 2)` the
/// interval is `[v(k), v(B + 1 - k)]` in 1-based order statistics. The
/// p-value for `value = 0` is `2 * min(P(v <= 0), P(v >= 0))`, clamped to
/// `[2 / (B + 1), 1]`.
pub fn se_and_ci(point: f64, values: &[f64], ci_level: f64) -> Result<BootstrapResult, BootstrapError> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let b = v.len();
    if b < MIN_REPLICATES {
        return Err(BootstrapError::TooFewReplicates {
            needed: MIN_REPLICATES,
            found: b,
        });
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(BootstrapError::InvalidConfig(format!("ci_level {ci_level} outside (0, 1)")));
    }
    let bf = b as f64;
    // Shifting by one replicate keeps constant samples exactly at se = 0.
    let shift = v[0];
    let mean = v.iter().map(|x| x - shift).sum::<f64>() / bf;
    let se = (v.iter().map(|x| (x - shift - mean).powi(2)).sum::<f64>() / bf).sqrt();
    v.sort_by(f64::total_cmp);
    let alpha = 1.0 - ci_level;
    let k = (((bf + 1.0) * alpha / 2.0).floor() as usize).clamp(1, b.div_ceil(2));
    let (ci_lo, ci_hi) = (v[k - 1], v[b - k]);
    let below = v.iter().filter(|x| **x <= 0.0).count() as f64 / bf;
    let above = v.iter().filter(|x| **x >= 0.0).count() as f64 / bf;
    let p_value = (2.0 * below.min(above)).clamp(2.0 / (bf + 1.0), 1.0);
    Ok(BootstrapResult {
        point,
        se,
        ci_lo,
        ci_hi,
        p_value,
        b_effective: b,
        ci_level,
    })
}

/// Raw replicate output of a vector-valued statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct Replicates {
    pub point: Vec<f64>,
    /// `values[b][j]`: statistic `j` in successful replicate `b`, in
    /// replicate-index order.
    pub values: Vec<Vec<f64>>,
    pub failed: usize,
    pub ci_level: f64,
}

impl Replicates {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn summarize(&self, j: usize) -> Result<BootstrapResult, BootstrapError> {
        se_and_ci(self.point[j], &self.column(j), self.ci_level)
    }

    pub fn summarize_all(&self) -> Result<Vec<BootstrapResult>, BootstrapError> {
        (0..self.point.len()).map(|j| self.summarize(j)).collect()
    }

    /// Writes one row per replicate with the given column names.
    /// One row per kept replicate, one column per statistic.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = format!("replicate,{}\n", names.join(","));
        for (b, row) in self.values.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            out.push_str(&format!("{b},{}\n", cells.join(",")));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, names: &[String]) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv(names))
    }
}

/// Runs `replicate(k, rng)` for `k in 0..B` in parallel and collects the
/// successes in index order. Replicates returning an error or a non-finite
/// value are dropped; more than 5% of them aborts the run.
pub fn replicate<E: Display>(
    cfg: &BootstrapConfig,
    point: Vec<f64>,
    replicate: impl Fn(&mut ChaCha8Rng) -> Result<Vec<f64>, E> + Sync,
) -> Result<Replicates, BootstrapError> {
    cfg.validate()?;
    let outcomes: Vec<Result<Vec<f64>, String>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng = cfg.rng(k);
            match replicate(&mut rng) {
                Ok(v) if v.len() == point.len() && v.iter().all(|x| x.is_finite()) => Ok(v),
                Ok(_) => Err(format!("replicate {k}: non-finite or misshapen statistic")),
                Err(e) => Err(format!("replicate {k}: {e}")),
            }
        })
        .collect();
    let mut values = Vec::with_capacity(cfg.replicates);
    let mut failed = 0;
    let mut first = None;
    for o in outcomes {
        match o {
            Ok(v) => values.push(v),
            Err(e) => {
                failed += 1;
                first.get_or_insert(e);
            }
        }
    }
    if failed as f64 > MAX_FAILED_FRACTION * cfg.replicates as f64 {
        return Err(BootstrapError::TooManyFailedReplicates {
            failed,
            total: cfg.replicates,
            first: first.unwrap_or_default(),
        });
    }
    if values.len() < MIN_REPLICATES {
        return Err(BootstrapError::TooFewReplicates {
            needed: MIN_REPLICATES,
            found: values.len(),
        });
    }
    Ok(Replicates {
        point,
        values,
        failed,
        ci_level: cfg.ci_level,
    })
}

/// Bootstraps a vector-valued statistic of the panel.
pub fn run_many<E: Display>(
    statistic: impl Fn(&EstimationPanel) -> Result<Vec<f64>, E> + Sync,
    panel: &EstimationPanel,
    cfg: &BootstrapConfig,
) -> Result<Replicates, BootstrapError> {
    let point = statistic(panel).map_err(|e| BootstrapError::InvalidConfig(format!("statistic failed on the data: {e}")))?;
    replicate(cfg, point, |rng| statistic(&resample_panel(panel, rng)))
}

/// Bootstraps a scalar statistic of the panel.
pub fn run<E: Display>(
    statistic: impl Fn(&EstimationPanel) -> Result<f64, E> + Sync,
    panel: &EstimationPanel,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult, BootstrapError> {
    run_many(|p| statistic(p).map(|v| vec![v]), panel, cfg)?.summarize(0)
}
