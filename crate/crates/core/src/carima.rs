//! Counterfactual evaluation of an intervention dated just after `t_star`.
//!
//! Every transition-probability series is fitted on the observation
//! window ending at `t_star` and forecast `horizon` quarters ahead. The
//! forecast rows are clamped to `[1e-9, 1 - 1e-9]` and renormalised, which
//! gives the counterfactual chain. Both the observed ("fitted") and the
//! counterfactual chain are applied to the observed shares at `t_star`;
//! their differences, averaged over the horizon, are the share effects,
//! and the differences of the chain products are the cumulative
//! transition effects.
//!
//! Inference bootstraps the whole pipeline: each replicate resamples every
//! quarter, re-estimates all matrices and refits every cell model with the
//! orders chosen on the original data (optionally re-selecting them).
//! A cheaper mode keeps the counterfactual chain fixed and only
//! re-estimates the observed side.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arima::{self, ArimaSpec, SelectOptions};
use crate::bootstrap::{self, BootstrapConfig, BootstrapMode, BootstrapResult, Replicates};
use crate::error::CarimaError;
use crate::estimator::{build_series, EstimationPanel, QuarterSeries};
use crate::flow::{
    chain_product, logistic, logit, matrix_difference, propagate_chain, MatrixChain, ShareVector, StateSpace,
    TransitionMatrix,
};
use crate::quarter::{QuarterId, QuarterWindow};

/// Forecast probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-9;
/// Two-sided level at which effects are flagged.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
const Z95: f64 = 1.959963984540054;

/// Scale on which matrix entries are forecast.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Logit,
    Raw,
    /// `ln(m(i,j) / m(i,i))` for the off-diagonal cells of each row.
    AdditiveLogRatio,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Logit => "logit",
            Scale::Raw => "raw",
            Scale::AdditiveLogRatio => "alr",
        })
    }
}

impl FromStr for Scale {
    type Err = CarimaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logit" => Ok(Scale::Logit),
            "raw" => Ok(Scale::Raw),
            "alr" | "additive_log_ratio" => Ok(Scale::AdditiveLogRatio),
            _ => Err(CarimaError::InvalidSpec(format!("unknown scale {s:?}, expected logit, raw or alr"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastOptions {
    pub scale: Scale,
    /// Quarterly seasonal terms in every cell model.
    pub seasonal: bool,
}

/// Observation window ending at `t_star` plus the forecast horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub window: QuarterWindow,
    pub horizon: usize,
}

impl InterventionSpec {
    pub fn new(window: QuarterWindow, horizon: usize) -> Result<Self, CarimaError> {
        if horizon == 0 {
            return Err(CarimaError::InvalidSpec("horizon must be at least 1".into()));
        }
        if window.len() < 2 {
            return Err(CarimaError::InvalidSpec(format!(
                "observation window {window} has no transitions"
            )));
        }
        Ok(Self { window, horizon })
    }

    /// Window `start..=t_star`.
    pub fn from_bounds(start: QuarterId, t_star: QuarterId, horizon: usize) -> Result<Self, CarimaError> {
        Self::new(QuarterWindow::new(start, t_star)?, horizon)
    }

    pub fn t_star(&self) -> QuarterId {
        self.window.end
    }

    /// `t_star+1..=t_star+horizon`.
    pub fn horizon_quarters(&self) -> Vec<QuarterId> {
        (1..=self.horizon as i64).map(|h| self.t_star().offset(h)).collect()
    }

    /// Everything the evaluation reads: `start..=t_star+horizon`.
    pub fn evaluation_window(&self) -> QuarterWindow {
        QuarterWindow {
            start: self.window.start,
            end: self.t_star().offset(self.horizon as i64),
        }
    }

    /// Same start and horizon, boundary moved to `t_star`.
    pub fn with_t_star(&self, t_star: QuarterId) -> Result<Self, CarimaError> {
        Self::from_bounds(self.window.start, t_star, self.horizon)
    }
}

/// The model behind one forecast cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellModel {
    pub from: String,
    pub to: String,
    /// `None` for cells without a model of their own (the reference cell
    /// under the log-ratio scale) or when fitting failed.
    pub spec: Option<ArimaSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Row replaced by its last observed value.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub row_fallback: bool,
}

/// Counterfactual chain with per-cell diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixForecast {
    pub chain: MatrixChain,
    /// Row-major `K x K`.
    pub models: Vec<CellModel>,
    /// 95% forecast interval per cell and horizon on the probability
    /// scale, before renormalisation. `None` where no interval exists.
    pub intervals: Vec<Option<Vec<(f64, f64)>>>,
    pub warnings: Vec<String>,
}

/// Forecast mean with 95% bounds.
type Path = (Vec<f64>, Vec<(f64, f64)>);

struct CellFit {
    spec: Option<ArimaSpec>,
    /// On the transformed scale.
    path: Result<Path, String>,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn fit_cell(series: &[f64], horizon: usize, opts: ForecastOptions, order: Option<ArimaSpec>) -> CellFit {
    let fitted = match order {
        Some(spec) => arima::fit(series, spec),
        None => arima::select(series, SelectOptions { seasonal: opts.seasonal }),
    };
    match fitted {
        Ok(f) => {
            let spec = Some(f.spec);
            let path = arima::forecast(&f, series, horizon)
                .map(|fc| {
                    let bounds = fc.interval(Z95);
                    (fc.mean_path, bounds)
                })
                .map_err(|e| e.to_string());
            CellFit { spec, path }
        }
        Err(e) => CellFit {
            spec: order,
            path: Err(e.to_string()),
        },
    }
}

/// Forecasts the matrices `t_star+1..=t_star+horizon` from the matrices
/// dated inside the observation window, selecting each cell's model by
/// AICc.
pub fn forecast_matrices(
    series: &QuarterSeries,
    spec: &InterventionSpec,
    opts: ForecastOptions,
) -> Result<MatrixForecast, CarimaError> {
    forecast_matrices_with(series, spec, opts, None)
}

/// As [`forecast_matrices`], optionally with fixed model orders per cell
/// (row-major, as returned in [`MatrixForecast::models`]).
pub fn forecast_matrices_with(
    series: &QuarterSeries,
    spec: &InterventionSpec,
    opts: ForecastOptions,
    orders: Option<&[Option<ArimaSpec>]>,
) -> Result<MatrixForecast, CarimaError> {
    let space = &series.space;
    let k = space.len();
    let history: Vec<&TransitionMatrix> = spec
        .window
        .quarters()
        .into_iter()
        .skip(1)
        .map(|q| series.matrix(q).ok_or(CarimaError::MissingQuarter(q)))
        .collect::<Result<_, _>>()?;
    let last = *history.last().expect("window has at least one transition");
    let alr = opts.scale == Scale::AdditiveLogRatio;
    let transformed = |i: usize, j: usize| -> Vec<f64> {
        history
            .iter()
            .map(|m| match opts.scale {
                Scale::Logit => logit(clamp_prob(m.get(i, j))),
                Scale::Raw => m.get(i, j),
                Scale::AdditiveLogRatio => (clamp_prob(m.get(i, j)) / clamp_prob(m.get(i, i))).ln(),
            })
            .collect()
    };
    let modelled = |c: usize| !(alr && c / k == c % k);
    let fits: Vec<Option<CellFit>> = (0..k * k)
        .into_par_iter()
        .map(|c| {
            modelled(c).then(|| {
                let order = orders.and_then(|o| o.get(c).copied().flatten());
                fit_cell(&transformed(c / k, c % k), spec.horizon, opts, order)
            })
        })
        .collect();

    let mut warnings = Vec::new();
    let mut models = Vec::with_capacity(k * k);
    let mut intervals = Vec::with_capacity(k * k);
    let mut entries = vec![vec![0.0; k * k]; spec.horizon];
    let mut first_error = None;
    let mut n_failed = 0;
    for i in 0..k {
        let cells: Vec<usize> = (0..k).map(|j| i * k + j).filter(|&c| modelled(c)).collect();
        let failed: Vec<usize> = cells
            .iter()
            .copied()
            .filter(|&c| fits[c].as_ref().is_some_and(|f| f.path.is_err()))
            .collect();
        n_failed += failed.len();
        let fallback = 2 * failed.len() > cells.len();
        for &c in &failed {
            let msg = fits[c].as_ref().unwrap().path.as_ref().unwrap_err();
            warnings.push(format!("cell ({},{}): {msg}", space.label(i), space.label(c % k)));
            first_error.get_or_insert_with(|| (i, c % k, msg.clone()));
        }
        if fallback {
            warnings.push(format!(
                "row {}: {} of {} cell models failed, using the last observed row",
                space.label(i),
                failed.len(),
                cells.len()
            ));
        }
        for j in 0..k {
            let c = i * k + j;
            let fit = fits[c].as_ref();
            models.push(CellModel {
                from: space.label(i).to_string(),
                to: space.label(j).to_string(),
                spec: fit.and_then(|f| f.path.as_ref().ok().and(f.spec)),
                failure: fit.and_then(|f| f.path.as_ref().err().cloned()),
                row_fallback: fallback,
            });
            let back = |x: f64| match opts.scale {
                Scale::Logit => logistic(x),
                Scale::Raw => x.clamp(0.0, 1.0),
                Scale::AdditiveLogRatio => x,
            };
            intervals.push(match fit.map(|f| &f.path) {
                Some(Ok((_, bounds))) if !alr => Some(bounds.iter().map(|(lo, hi)| (back(*lo), back(*hi))).collect()),
                _ => None,
            });
        }
        for (h, row_out) in entries.iter_mut().enumerate() {
            let row = &mut row_out[i * k..(i + 1) * k];
            if fallback {
                row.copy_from_slice(last.row(i));
                continue;
            }
            for j in 0..k {
                let c = i * k + j;
                let point = match fits[c].as_ref().map(|f| &f.path) {
                    Some(Ok((mean, _))) => mean[h],
                    Some(Err(_)) => transformed(i, j)[history.len() - 1],
                    None => 0.0,
                };
                row[j] = match opts.scale {
                    Scale::Logit => logistic(point),
                    Scale::Raw => point,
                    Scale::AdditiveLogRatio => point.exp(),
                };
            }
            if alr {
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= total);
            }
            row.iter_mut().for_each(|v| *v = clamp_prob(*v));
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    let n_modelled = (0..k * k).filter(|&c| modelled(c)).count();
    if n_failed == n_modelled {
        let (i, j, msg) = first_error.expect("at least one cell");
        return Err(CarimaError::InvalidSpec(format!(
            "every cell model failed, first at ({},{}): {msg}",
            space.label(i),
            space.label(j)
        )));
    }
    let chain = MatrixChain::new(
        entries
            .into_iter()
            .zip(spec.horizon_quarters())
            .map(|(e, q)| TransitionMatrix::new(space.clone(), q, e))
            .collect::<Result<_, _>>()?,
    )?;
    Ok(MatrixForecast {
        chain,
        models,
        intervals,
        warnings,
    })
}

fn anchor(series: &QuarterSeries, spec: &InterventionSpec) -> Result<ShareVector, CarimaError> {
    series
        .shares_at(spec.t_star())
        .cloned()
        .ok_or(CarimaError::MissingQuarter(spec.t_star()))
}

/// Observed matrices over the horizon and the shares they imply from the
/// observed shares at `t_star`.
pub fn fitted_path(
    series: &QuarterSeries,
    spec: &InterventionSpec,
) -> Result<(MatrixChain, Vec<ShareVector>), CarimaError> {
    let chain = MatrixChain::new(
        spec.horizon_quarters()
            .into_iter()
            .map(|q| series.matrix(q).cloned().ok_or(CarimaError::MissingQuarter(q)))
            .collect::<Result<_, _>>()?,
    )?;
    let path = propagate_chain(&anchor(series, spec)?, &chain)?;
    Ok((chain, path))
}

/// Shares implied by `forecast` from the observed shares at `t_star`.
pub fn counterfactual_path(
    series: &QuarterSeries,
    spec: &InterventionSpec,
    forecast: &MatrixChain,
) -> Result<Vec<ShareVector>, CarimaError> {
    Ok(propagate_chain(&anchor(series, spec)?, forecast)?)
}

/// Point estimates of every effect.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEffects {
    pub fitted_chain: MatrixChain,
    pub forecast: MatrixForecast,
    pub fitted_path: Vec<ShareVector>,
    pub forecast_path: Vec<ShareVector>,
    pub fitted_average: Vec<f64>,
    pub forecast_average: Vec<f64>,
    /// Horizon-averaged fitted minus forecast shares.
    pub share_diffs: Vec<f64>,
    pub cumulative_fitted: TransitionMatrix,
    pub cumulative_forecast: TransitionMatrix,
    pub cumulative_effects: Vec<Vec<f64>>,
}

fn average(path: &[ShareVector], k: usize) -> Vec<f64> {
    (0..k)
        .map(|j| path.iter().map(|s| s.get(j)).sum::<f64>() / path.len() as f64)
        .collect()
}

impl PointEffects {
    /// Flattened statistics in the order used by the bootstrap: fitted
    /// average, forecast average, share differences (`K` each), then
    /// cumulative effects, fitted and forecast products (`K x K` each).
    pub fn statistics(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&self.fitted_average);
        v.extend(&self.forecast_average);
        v.extend(&self.share_diffs);
        v.extend(self.cumulative_effects.iter().flatten());
        v.extend(self.cumulative_fitted.entries());
        v.extend(self.cumulative_forecast.entries());
        v
    }
}

/// Effects of `series` against an already forecast chain.
pub fn effects_given(
    series: &QuarterSeries,
    spec: &InterventionSpec,
    forecast: MatrixForecast,
) -> Result<PointEffects, CarimaError> {
    let k = series.space.len();
    let (fitted_chain, fitted_path) = fitted_path(series, spec)?;
    let forecast_path = counterfactual_path(series, spec, &forecast.chain)?;
    let share_diffs = (0..k)
        .map(|j| {
            fitted_path
                .iter()
                .zip(&forecast_path)
                .map(|(a, b)| a.get(j) - b.get(j))
                .sum::<f64>()
                / spec.horizon as f64
        })
        .collect();
    let cumulative_fitted = chain_product(&fitted_chain)?;
    let cumulative_forecast = chain_product(&forecast.chain)?;
    let cumulative_effects = matrix_difference(&cumulative_fitted, &cumulative_forecast)?.entries;
    Ok(PointEffects {
        fitted_average: average(&fitted_path, k),
        forecast_average: average(&forecast_path, k),
        fitted_chain,
        forecast,
        fitted_path,
        forecast_path,
        share_diffs,
        cumulative_fitted,
        cumulative_forecast,
        cumulative_effects,
    })
}

pub fn point_effects(
    series: &QuarterSeries,
    spec: &InterventionSpec,
    opts: ForecastOptions,
) -> Result<PointEffects, CarimaError> {
    let forecast = forecast_matrices(series, spec, opts)?;
    effects_given(series, spec, forecast)
}

/// A point estimate with optional bootstrap inference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub significant: bool,
}

impl Estimate {
    fn bare(estimate: f64) -> Self {
        Self {
            estimate,
            se: None,
            ci_lo: None,
            ci_hi: None,
            p_value: None,
            significant: false,
        }
    }

    fn from_bootstrap(r: &BootstrapResult) -> Self {
        Self {
            estimate: r.point,
            se: Some(r.se),
            ci_lo: Some(r.ci_lo),
            ci_hi: Some(r.ci_hi),
            p_value: Some(r.p_value),
            significant: r.significant_at(SIGNIFICANCE_LEVEL),
        }
    }

    /// Multiplies by `c > 0`; the test outcome is unchanged.
    fn scaled(&self, c: f64) -> Self {
        Self {
            estimate: self.estimate * c,
            se: self.se.map(|v| v * c),
            ci_lo: self.ci_lo.map(|v| v * c),
            ci_hi: self.ci_hi.map(|v| v * c),
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub master_seed: u64,
    pub mode: BootstrapMode,
    pub ci_level: f64,
    pub b_effective: usize,
    pub failed: usize,
    pub reselect_orders: bool,
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub states: StateSpace,
    pub window: QuarterWindow,
    pub t_star: QuarterId,
    pub horizon: usize,
    pub horizon_quarters: Vec<QuarterId>,
    pub scale: Scale,
    pub seasonal: bool,
    pub significance_level: f64,
    pub selection_rule: String,
    pub bootstrap: Option<BootstrapSummary>,
    pub models: Vec<CellModel>,
    pub warnings: Vec<String>,
}

/// One row of a plot-ready cell series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub period: QuarterId,
    pub observed: Option<f64>,
    pub forecast: Option<f64>,
    pub lo95: Option<f64>,
    pub hi95: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub population: f64,
    pub fitted_shares: Vec<ShareVector>,
    pub forecasted_shares: Vec<ShareVector>,
    /// Horizon averages with standard errors.
    pub fitted_average: Vec<Estimate>,
    pub forecasted_average: Vec<Estimate>,
    pub share_diffs: Vec<Estimate>,
    /// `share_diffs * population`.
    pub count_diffs: Vec<Estimate>,
    pub cumulative_fitted: TransitionMatrix,
    pub cumulative_forecasted: TransitionMatrix,
    pub cumulative_effects: Vec<Vec<Estimate>>,
    /// Raw estimated shares over the horizon, which drift from the fitted
    /// ones when the real population is not closed.
    pub observed_shares: Vec<ShareVector>,
    /// Horizon-averaged observed minus fitted shares.
    pub observed_fitted_gap: Vec<f64>,
    pub meta: ReportMeta,
    #[serde(skip)]
    pub cell_series: Vec<(String, String, Vec<SeriesRow>)>,
    #[serde(skip)]
    pub replicates: Option<Replicates>,
}

impl EffectReport {
    /// Indices of states whose count difference is significant.
    pub fn significant_counts(&self) -> Vec<usize> {
        (0..self.count_diffs.len())
            .filter(|&j| self.count_diffs[j].significant)
            .collect()
    }

    /// Names of the bootstrap statistics, matching the replicate columns.
    pub fn statistic_names(&self) -> Vec<String> {
        let labels = self.meta.states.labels();
        let mut names = Vec::new();
        for prefix in ["fitted_avg", "forecast_avg", "share_diff"] {
            names.extend(labels.iter().map(|l| format!("{prefix}_{l}")));
        }
        for prefix in ["cum_effect", "cum_fitted", "cum_forecast"] {
            for a in labels {
                names.extend(labels.iter().map(|b| format!("{prefix}_{a}_{b}")));
            }
        }
        names
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub population: f64,
    pub forecast: ForecastOptions,
    /// `None` skips inference.
    pub bootstrap: Option<BootstrapConfig>,
    /// Re-run order selection in every full-pipeline replicate.
    pub reselect_orders: bool,
}

impl EvaluationConfig {
    pub fn new(population: f64, bootstrap: Option<BootstrapConfig>) -> Self {
        Self {
            population,
            forecast: ForecastOptions::default(),
            bootstrap,
            reselect_orders: false,
        }
    }
}

fn cell_series(series: &QuarterSeries, spec: &InterventionSpec, point: &PointEffects) -> Vec<(String, String, Vec<SeriesRow>)> {
    let k = series.space.len();
    let horizon = spec.horizon_quarters();
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let c = i * k + j;
            let rows = spec
                .evaluation_window()
                .quarters()
                .into_iter()
                .skip(1)
                .map(|q| {
                    let h = horizon.iter().position(|x| *x == q);
                    let band = h.and_then(|h| point.forecast.intervals[c].as_ref().map(|b| b[h]));
                    SeriesRow {
                        period: q,
                        observed: series.matrix(q).map(|m| m.get(i, j)),
                        forecast: h.map(|h| point.forecast.chain.matrices()[h].get(i, j)),
                        lo95: band.map(|b| b.0),
                        hi95: band.map(|b| b.1),
                    }
                })
                .collect();
            out.push((series.space.label(i).to_string(), series.space.label(j).to_string(), rows));
        }
    }
    out
}

/// Estimates, forecasts and bootstraps the effects of an intervention
/// right after `spec.t_star()`.
pub fn effects(
    panel: &EstimationPanel,
    spec: &InterventionSpec,
    cfg: &EvaluationConfig,
) -> Result<EffectReport, CarimaError> {
    if !(cfg.population > 0.0 && cfg.population.is_finite()) {
        return Err(CarimaError::BadPopulation(cfg.population));
    }
    let eval = spec.evaluation_window();
    let panel = panel.restrict(eval);
    let series = build_series(&panel, eval)?;
    let point = point_effects(&series, spec, cfg.forecast)?;
    let k = series.space.len();

    let (estimates, summary, replicates) = match &cfg.bootstrap {
        None => (point.statistics().into_iter().map(Estimate::bare).collect::<Vec<_>>(), None, None),
        Some(bcfg) => {
            let orders: Vec<Option<ArimaSpec>> = point.forecast.models.iter().map(|m| m.spec).collect();
            let reps = bootstrap::replicate(bcfg, point.statistics(), |rng| -> Result<Vec<f64>, CarimaError> {
                let resampled = bootstrap::resample_panel(&panel, rng);
                let s = build_series(&resampled, eval)?;
                let forecast = match bcfg.mode {
                    BootstrapMode::FullPipeline => {
                        let fixed = (!cfg.reselect_orders).then_some(orders.as_slice());
                        forecast_matrices_with(&s, spec, cfg.forecast, fixed)?
                    }
                    BootstrapMode::EstimationOnly => point.forecast.clone(),
                };
                Ok(effects_given(&s, spec, forecast)?.statistics())
            })?;
            let results = reps.summarize_all()?;
            let summary = BootstrapSummary {
                replicates: bcfg.replicates,
                master_seed: bcfg.master_seed,
                mode: bcfg.mode,
                ci_level: bcfg.ci_level,
                b_effective: reps.values.len(),
                failed: reps.failed,
                reselect_orders: cfg.reselect_orders,
                method: "percentile intervals and p-values; quarter-stratified weighted resampling of persons; \
                         household clustering ignored"
                    .into(),
            };
            (results.iter().map(Estimate::from_bootstrap).collect(), Some(summary), Some(reps))
        }
    };
    let take = |from: usize, n: usize| estimates[from..from + n].to_vec();
    let share_diffs = take(2 * k, k);
    let cumulative_effects = take(3 * k, k * k).chunks(k).map(<[Estimate]>::to_vec).collect();
    let observed_shares: Vec<ShareVector> = spec
        .horizon_quarters()
        .into_iter()
        .map(|q| series.shares_at(q).cloned().ok_or(CarimaError::MissingQuarter(q)))
        .collect::<Result<_, _>>()?;
    let observed_avg = average(&observed_shares, k);
    let mut warnings = series.meta.warnings.clone();
    warnings.extend(point.forecast.warnings.iter().cloned());

    Ok(EffectReport {
        population: cfg.population,
        fitted_average: take(0, k),
        forecasted_average: take(k, k),
        count_diffs: share_diffs.iter().map(|e| e.scaled(cfg.population)).collect(),
        share_diffs,
        cumulative_effects,
        observed_fitted_gap: observed_avg.iter().zip(&point.fitted_average).map(|(o, f)| o - f).collect(),
        observed_shares,
        cell_series: cell_series(&series, spec, &point),
        fitted_shares: point.fitted_path,
        forecasted_shares: point.forecast_path,
        cumulative_fitted: point.cumulative_fitted,
        cumulative_forecasted: point.cumulative_forecast,
        meta: ReportMeta {
            states: series.space.clone(),
            window: spec.window,
            t_star: spec.t_star(),
            horizon: spec.horizon,
            horizon_quarters: spec.horizon_quarters(),
            scale: cfg.forecast.scale,
            seasonal: cfg.forecast.seasonal,
            significance_level: SIGNIFICANCE_LEVEL,
            selection_rule: "minimum AICc over p<=2, d<=1, q<=1, drift on/off; ties to fewer parameters, then lower p"
                .into(),
            bootstrap: summary,
            models: point.forecast.models,
            warnings,
        },
        replicates,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceboReport {
    pub report: EffectReport,
    /// States with a significant count difference.
    pub significant: Vec<String>,
    /// No count difference significant at 5%.
    pub pass: bool,
}

/// Runs the evaluation at a fake boundary. When `true_t_star` is given,
/// the whole placebo horizon must end by then.
pub fn placebo(
    panel: &EstimationPanel,
    spec: &InterventionSpec,
    true_t_star: Option<QuarterId>,
    cfg: &EvaluationConfig,
) -> Result<PlaceboReport, CarimaError> {
    if let Some(t) = true_t_star {
        let end = spec.evaluation_window().end;
        if end > t {
            return Err(CarimaError::InvalidSpec(format!(
                "placebo horizon ends {end}, after the real intervention at {t}"
            )));
        }
    }
    let report = effects(panel, spec, cfg)?;
    let significant: Vec<String> = report
        .significant_counts()
        .into_iter()
        .map(|j| report.meta.states.label(j).to_string())
        .collect();
    Ok(PlaceboReport {
        pass: significant.is_empty(),
        significant,
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub shift: i64,
    pub original: EffectReport,
    pub shifted: EffectReport,
}

/// Re-runs the evaluation with the boundary moved by at most one quarter,
/// keeping the window start and the horizon length.
pub fn shift_tstar(
    panel: &EstimationPanel,
    spec: &InterventionSpec,
    new_t_star: QuarterId,
    cfg: &EvaluationConfig,
) -> Result<ShiftReport, CarimaError> {
    let shift = new_t_star.since(spec.t_star());
    if shift.abs() > 1 {
        return Err(CarimaError::ShiftTooLarge(shift));
    }
    let original = effects(panel, spec, cfg)?;
    let shifted = if shift == 0 {
        original.clone()
    } else {
        effects(panel, &spec.with_t_star(new_t_star)?, cfg)?
    };
    Ok(ShiftReport {
        shift,
        original,
        shifted,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn header(space: &StateSpace, first: &str) -> String {
    let mut s = first.to_string();
    for l in space.labels() {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    s
}

fn table_row(s: &mut String, name: &str, values: impl Iterator<Item = String>) {
    s.push_str(name);
    for v in values {
        let _ = write!(s, ",{v}");
    }
    s.push('\n');
}

/// Output files of an evaluation as `(file name, contents)`: the JSON
/// report, the three effect tables, a long-format significance table and
/// one plot-ready series per cell.
pub fn render_outputs(report: &EffectReport) -> Result<BTreeMap<String, String>, serde_json::Error> {
    let space = &report.meta.states;
    let mut files = BTreeMap::new();
    files.insert("effects.json".to_string(), serde_json::to_string_pretty(report)? + "\n");

    let mut a = header(space, "row");
    table_row(&mut a, "fitted", report.fitted_average.iter().map(|e| e.estimate.to_string()));
    table_row(&mut a, "fitted_se", report.fitted_average.iter().map(|e| fmt_opt(e.se)));
    table_row(&mut a, "forecasted", report.forecasted_average.iter().map(|e| e.estimate.to_string()));
    table_row(&mut a, "forecasted_se", report.forecasted_average.iter().map(|e| fmt_opt(e.se)));
    table_row(&mut a, "difference", report.share_diffs.iter().map(|e| e.estimate.to_string()));
    files.insert("table2a.csv".into(), a);

    let mut b = header(space, "row");
    table_row(&mut b, "ci_hi", report.count_diffs.iter().map(|e| fmt_opt(e.ci_hi)));
    table_row(&mut b, "difference", report.count_diffs.iter().map(|e| e.estimate.to_string()));
    table_row(&mut b, "ci_lo", report.count_diffs.iter().map(|e| fmt_opt(e.ci_lo)));
    files.insert("table2b.csv".into(), b);

    let mut c = header(space, "from");
    for (i, row) in report.cumulative_effects.iter().enumerate() {
        table_row(&mut c, space.label(i), row.iter().map(|e| e.estimate.to_string()));
    }
    files.insert("table2c.csv".into(), c);

    let mut sig = String::from("table,row,column,estimate,se,ci_lo,ci_hi,p_value,significant\n");
    let mut push = |table: &str, row: &str, col: &str, e: &Estimate| {
        let _ = writeln!(
            sig,
            "{table},{row},{col},{},{},{},{},{},{}",
            e.estimate,
            fmt_opt(e.se),
            fmt_opt(e.ci_lo),
            fmt_opt(e.ci_hi),
            fmt_opt(e.p_value),
            e.significant
        );
    };
    for (j, l) in space.labels().iter().enumerate() {
        push("2a", "fitted", l, &report.fitted_average[j]);
        push("2a", "forecasted", l, &report.forecasted_average[j]);
        push("2a", "difference", l, &report.share_diffs[j]);
        push("2b", "difference", l, &report.count_diffs[j]);
    }
    for (i, row) in report.cumulative_effects.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            push("2c", space.label(i), space.label(j), e);
        }
    }
    files.insert("significance.csv".into(), sig);

    for (from, to, rows) in &report.cell_series {
        let mut s = String::from("period,observed,forecast,lo95,hi95\n");
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.period,
                fmt_opt(r.observed),
                fmt_opt(r.forecast),
                fmt_opt(r.lo95),
                fmt_opt(r.hi95)
            );
        }
        files.insert(format!("series_{from}-{to}.csv"), s);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{Move, Observation, QuarterSample, SeriesMeta};
    use crate::flow::propagate;

    fn q(s: &str) -> QuarterId {
        s.parse().unwrap()
    }

    fn two_state() -> StateSpace {
        StateSpace::new(&["A", "B"]).unwrap()
    }

    /// Series with the given matrices dated `start+1..` and shares at every
    /// quarter from `start`.
    fn series_from(start: QuarterId, shares0: Vec<f64>, mats: Vec<Vec<Vec<f64>>>) -> QuarterSeries {
        let space = StateSpace::new(&(0..shares0.len()).map(|i| format!("S{i}")).collect::<Vec<_>>()).unwrap();
        let mut pi = ShareVector::new(space.clone(), start, shares0).unwrap();
        let mut shares = BTreeMap::from([(start, pi.clone())]);
        let mut matrices = BTreeMap::new();
        for (h, rows) in mats.iter().enumerate() {
            let p = start.offset(h as i64 + 1);
            let m = TransitionMatrix::from_rows(space.clone(), p, rows).unwrap();
            pi = propagate(&pi, &m).unwrap();
            shares.insert(p, pi.clone());
            matrices.insert(p, m);
        }
        QuarterSeries {
            space,
            window: QuarterWindow::new(start, start.offset(mats.len() as i64)).unwrap(),
            matrices,
            shares,
            counts: BTreeMap::new(),
            meta: SeriesMeta::default(),
        }
    }

    #[test]
    fn constant_history_forecasts_itself() {
        let rows = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let s = series_from(q("2016Q1"), vec![0.5, 0.5], vec![rows.clone(); 12]);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q3"), 4).unwrap();
        for scale in [Scale::Logit, Scale::Raw, Scale::AdditiveLogRatio] {
            let f = forecast_matrices(&s, &spec, ForecastOptions { scale, seasonal: false }).unwrap();
            assert_eq!(f.chain.len(), 4);
            assert_eq!(f.chain.first_period(), Some(q("2018Q4")));
            for m in f.chain.matrices() {
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((m.get(i, j) - rows[i][j]).abs() < 1e-9, "{scale}: {:?}", m.rows());
                    }
                }
            }
        }
    }

    #[test]
    fn logit_trend_is_continued() {
        let mats: Vec<Vec<Vec<f64>>> = (0..14)
            .map(|t| {
                let p = logistic(logit(0.1) + 0.05 * t as f64);
                vec![vec![1.0 - p, p], vec![0.2, 0.8]]
            })
            .collect();
        let s = series_from(q("2016Q1"), vec![0.5, 0.5], mats);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q3"), 4).unwrap();
        let f = forecast_matrices(&s, &spec, ForecastOptions::default()).unwrap();
        let path: Vec<f64> = f.chain.matrices().iter().map(|m| m.get(0, 1)).collect();
        assert!(path.windows(2).all(|w| w[1] > w[0]), "{path:?}");
        assert!(path[0] > s.matrix(q("2018Q3")).unwrap().get(0, 1));
    }

    #[test]
    fn window_too_short_for_any_model() {
        let s = series_from(q("2016Q1"), vec![0.5, 0.5], vec![vec![vec![0.9, 0.1], vec![0.2, 0.8]]; 6]);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2016Q4"), 2).unwrap();
        assert!(matches!(forecast_matrices(&s, &spec, ForecastOptions::default()), Err(CarimaError::InvalidSpec(_))));
        let missing = InterventionSpec::from_bounds(q("2015Q1"), q("2016Q4"), 2).unwrap();
        assert!(matches!(
            forecast_matrices(&s, &missing, ForecastOptions::default()),
            Err(CarimaError::MissingQuarter(_))
        ));
    }

    #[test]
    fn identity_observed_keeps_shares() {
        let mut mats = vec![vec![vec![0.9, 0.1], vec![0.2, 0.8]]; 10];
        mats.push(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = series_from(q("2016Q1"), vec![0.3, 0.7], mats);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q3"), 1).unwrap();
        let (_, path) = fitted_path(&s, &spec).unwrap();
        assert_eq!(path[0].values(), s.shares_at(q("2018Q3")).unwrap().values());
    }

    #[test]
    fn identical_chains_give_exact_zero() {
        let rows = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let s = series_from(q("2016Q1"), vec![0.5, 0.5], vec![rows; 14]);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q3"), 3).unwrap();
        let (fitted, _) = fitted_path(&s, &spec).unwrap();
        let fake = MatrixForecast {
            chain: fitted.clone(),
            models: vec![],
            intervals: vec![],
            warnings: vec![],
        };
        let e = effects_given(&s, &spec, fake).unwrap();
        assert!(e.share_diffs.iter().all(|d| *d == 0.0));
        assert!(e.cumulative_effects.iter().flatten().all(|d| *d == 0.0));
        assert_eq!(counterfactual_path(&s, &spec, &fitted).unwrap(), e.fitted_path);
    }

    #[test]
    fn horizon_one_difference_is_anchored() {
        let mut mats = vec![vec![vec![0.9, 0.1], vec![0.2, 0.8]]; 11];
        mats.push(vec![vec![0.7, 0.3], vec![0.25, 0.75]]);
        let s = series_from(q("2016Q1"), vec![0.4, 0.6], mats);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q4"), 1).unwrap();
        let e = point_effects(&s, &spec, ForecastOptions::default()).unwrap();
        let pi = s.shares_at(q("2018Q4")).unwrap();
        let fit = &e.fitted_chain.matrices()[0];
        let fc = &e.forecast.chain.matrices()[0];
        for j in 0..2 {
            let direct: f64 = (0..2).map(|i| pi.get(i) * (fit.get(i, j) - fc.get(i, j))).sum();
            assert!((e.share_diffs[j] - direct).abs() < 1e-10);
        }
        assert!(e.share_diffs.iter().sum::<f64>().abs() < 1e-8);
        for row in &e.cumulative_effects {
            assert!(row.iter().sum::<f64>().abs() < 1e-8);
        }
    }

    fn noisy_panel(seed: u64) -> EstimationPanel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let space = two_state();
        let truth = [[0.9, 0.1], [0.2, 0.8]];
        let mut quarters = BTreeMap::new();
        for t in 0..15 {
            let p = q("2016Q1").offset(t);
            let mut sample = QuarterSample::default();
            for _ in 0..800 {
                let from = usize::from(rng.random::<f64>() < 1.0 / 3.0);
                let to = usize::from(rng.random::<f64>() >= truth[from][0]);
                sample.observations.push(Observation { state: to, weight: 1.0 });
                if t > 0 {
                    sample.moves.push(Move { from, to, weight: 1.0 });
                }
            }
            quarters.insert(p, sample);
        }
        EstimationPanel { space, quarters }
    }

    #[test]
    fn population_scales_counts_only() {
        let panel = noisy_panel(1);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q3"), 3).unwrap();
        let b = Some(BootstrapConfig::new(100, 5));
        let one = effects(&panel, &spec, &EvaluationConfig::new(1.0, b)).unwrap();
        let big = effects(&panel, &spec, &EvaluationConfig::new(3.8e7, b)).unwrap();
        for j in 0..2 {
            assert_eq!(one.share_diffs[j], big.share_diffs[j]);
            assert!((big.count_diffs[j].estimate - 3.8e7 * one.count_diffs[j].estimate).abs() < 1e-6);
            assert_eq!(big.count_diffs[j].significant, one.count_diffs[j].significant);
        }
        assert!(matches!(
            effects(&panel, &spec, &EvaluationConfig::new(0.0, b)),
            Err(CarimaError::BadPopulation(_))
        ));
    }

    #[test]
    fn report_is_deterministic_and_renders() {
        let panel = noisy_panel(2);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q3"), 4).unwrap();
        let cfg = EvaluationConfig::new(1000.0, Some(BootstrapConfig::new(100, 9)));
        let a = render_outputs(&effects(&panel, &spec, &cfg).unwrap()).unwrap();
        let b = render_outputs(&effects(&panel, &spec, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        for name in ["effects.json", "table2a.csv", "table2b.csv", "table2c.csv", "significance.csv", "series_A-B.csv"] {
            assert!(a.contains_key(name), "{name}");
        }
        let series = &a["series_A-B.csv"];
        assert_eq!(series.lines().count(), 1 + 14);
        assert!(series.lines().last().unwrap().split(',').all(|f| !f.is_empty()));
    }

    #[test]
    fn shift_limits() {
        let panel = noisy_panel(3);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2018Q2"), 3).unwrap();
        let cfg = EvaluationConfig::new(1.0, None);
        assert!(matches!(
            shift_tstar(&panel, &spec, q("2018Q4"), &cfg),
            Err(CarimaError::ShiftTooLarge(2))
        ));
        let same = shift_tstar(&panel, &spec, q("2018Q2"), &cfg).unwrap();
        assert_eq!(same.original, same.shifted);
        let moved = shift_tstar(&panel, &spec, q("2018Q3"), &cfg).unwrap();
        assert_eq!(moved.shifted.meta.t_star, q("2018Q3"));
        assert_eq!(moved.shifted.meta.horizon, 3);
    }

    #[test]
    fn placebo_must_precede_the_intervention() {
        let panel = noisy_panel(4);
        let spec = InterventionSpec::from_bounds(q("2016Q1"), q("2017Q3"), 3).unwrap();
        let cfg = EvaluationConfig::new(1.0, None);
        assert!(placebo(&panel, &spec, Some(q("2018Q1")), &cfg).is_err());
        let ok = placebo(&panel, &spec, Some(q("2018Q3")), &cfg).unwrap();
        // Without inference nothing can be significant.
        assert!(ok.pass);
    }

    #[test]
    fn scale_parsing() {
        assert_eq!("alr".parse::<Scale>().unwrap(), Scale::AdditiveLogRatio);
        assert!("probit".parse::<Scale>().is_err());
    }
}
