//! Low-order ARIMA(p, d, q) models for short quarterly series.
//!
//! Fitting maximises the exact Gaussian likelihood of the differenced
//! series. The ARMA coefficients are searched by Nelder-Mead in an
//! unconstrained parameterisation (`tanh` of partial autocorrelations for
//! the AR part, `tanh` for the MA coefficient), so every fit is stationary
//! and invertible. Mean, trend, drift and seasonal terms enter as
//! regressors and are concentrated out by GLS on the Kalman innovations.
//!
//! Deterministic terms:
//!
//! | `d` | always      | `drift = true`              | `seasonal = true`              |
//! |-----|-------------|-----------------------------|--------------------------------|
//! | 0   | intercept   | linear time trend           | sum-to-zero quarter effects    |
//! | 1   | none        | constant in the differences | sum-to-zero quarter effects    |

mod kalman;
mod optim;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ArimaError;
use kalman::StateSpaceForm;
use optim::NelderMead;

/// Innovation variances below this are clamped (degenerate series).
pub const SIGMA2_FLOOR: f64 = 1e-12;
const PARAM_BOUND: f64 = 10.0;
const SEASON: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub drift: bool,
    #[serde(default)]
    pub seasonal: bool,
}

impl ArimaSpec {
    pub fn new(p: usize, d: usize, q: usize, drift: bool) -> Result<Self, ArimaError> {
        let spec = Self {
            p,
            d,
            q,
            drift,
            seasonal: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_seasonal(mut self, seasonal: bool) -> Self {
        self.seasonal = seasonal;
        self
    }

    pub fn validate(&self) -> Result<(), ArimaError> {
        if self.p > 2 || self.d > 1 || self.q > 1 {
            return Err(ArimaError::InvalidSpec(format!(
                "{self} outside the p<=2, d<=1, q<=1 grid"
            )));
        }
        Ok(())
    }

    /// Minimum series length accepted by [`fit`].
    pub fn min_len(&self) -> usize {
        self.p + self.q + self.d + 3
    }

    fn n_regressors(&self) -> usize {
        let base = match (self.d, self.drift) {
            (0, false) => 1,
            (0, true) => 2,
            (_, false) => 0,
            (_, true) => 1,
        };
        base + if self.seasonal { SEASON - 1 } else { 0 }
    }

    /// Free parameters counted by AICc, including the innovation variance.
    pub fn n_params(&self) -> usize {
        self.p + self.q + self.n_regressors() + 1
    }

    /// Regressor row for observation index `t` (0-based) of the differenced
    /// series.
    fn regressors(&self, t: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.n_regressors());
        if self.d == 0 {
            row.push(1.0);
        }
        if self.drift {
            row.push(if self.d == 0 { (t + 1) as f64 } else { 1.0 });
        }
        if self.seasonal {
            let s = (t + self.d) % SEASON;
            for k in 1..SEASON {
                row.push(if s == k {
                    1.0
                } else if s == 0 {
                    -1.0
                } else {
                    0.0
                });
            }
        }
        row
    }

    /// The grid searched by [`select`].
    pub fn grid(seasonal: bool) -> Vec<ArimaSpec> {
        let mut out = Vec::new();
        for p in 0..=2 {
            for d in 0..=1 {
                for q in 0..=1 {
                    for drift in [false, true] {
                        out.push(ArimaSpec {
                            p,
                            d,
                            q,
                            drift,
                            seasonal,
                        });
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for ArimaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.p, self.d, self.q)?;
        if self.drift {
            f.write_str(if self.d == 0 { "+trend" } else { "+drift" })?;
        }
        if self.seasonal {
            f.write_str("+seasonal")?;
        }
        Ok(())
    }
}

/// A fitted model. Regression terms are split into `mean` (intercept,
/// `d = 0` only), `drift_coeff` and `seasonal_coeffs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub spec: ArimaSpec,
    pub ar_coeffs: Vec<f64>,
    pub ma_coeffs: Vec<f64>,
    pub mean: f64,
    pub drift_coeff: f64,
    pub seasonal_coeffs: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub aicc: f64,
    /// Length of the differenced series.
    pub n_obs: usize,
    /// One-step-ahead prediction errors of the differenced series.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl ArimaFit {
    fn beta(&self) -> Vec<f64> {
        let mut b = Vec::new();
        if self.spec.d == 0 {
            b.push(self.mean);
        }
        if self.spec.drift {
            b.push(self.drift_coeff);
        }
        b.extend_from_slice(&self.seasonal_coeffs);
        b
    }

    /// Builds a fit from known coefficients, e.g. to forecast from a
    /// model estimated elsewhere. Likelihood fields are left NaN.
    pub fn from_coefficients(
        spec: ArimaSpec,
        ar: Vec<f64>,
        ma: Vec<f64>,
        mean: f64,
        drift: f64,
        sigma2: f64,
        n_obs: usize,
    ) -> Result<Self, ArimaError> {
        spec.validate()?;
        if ar.len() != spec.p || ma.len() != spec.q || spec.seasonal {
            return Err(ArimaError::InvalidSpec(format!("coefficients do not match {spec}")));
        }
        Ok(Self {
            spec,
            ar_coeffs: ar,
            ma_coeffs: ma,
            mean: if spec.d == 0 { mean } else { 0.0 },
            drift_coeff: if spec.drift { drift } else { 0.0 },
            seasonal_coeffs: vec![],
            sigma2,
            loglik: f64::NAN,
            aicc: f64::NAN,
            n_obs,
            residuals: vec![],
            converged: true,
            warnings: vec![],
        })
    }
}

fn difference(series: &[f64], d: usize) -> Vec<f64> {
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    out
}

/// Maps unconstrained parameters to stationary AR and invertible MA
/// coefficients.
fn transform(spec: &ArimaSpec, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pacf: Vec<f64> = x[..spec.p]
        .iter()
        .map(|v| v.clamp(-PARAM_BOUND, PARAM_BOUND).tanh())
        .collect();
    let ar = match spec.p {
        0 => vec![],
        1 => vec![pacf[0]],
        _ => vec![pacf[0] * (1.0 - pacf[1]), pacf[1]],
    };
    let ma = x[spec.p..]
        .iter()
        .map(|v| v.clamp(-PARAM_BOUND, PARAM_BOUND).tanh())
        .collect();
    (ar, ma)
}

fn inverse_transform(spec: &ArimaSpec, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let squash = |v: f64| v.clamp(-0.95, 0.95).atanh();
    let mut x = Vec::with_capacity(spec.p + spec.q);
    match spec.p {
        0 => {}
        1 => x.push(squash(ar[0])),
        _ => {
            let r2 = ar[1].clamp(-0.95, 0.95);
            x.push(squash(ar[0] / (1.0 - r2)));
            x.push(squash(r2));
        }
    }
    x.extend(ma.iter().map(|v| squash(*v)));
    x
}

/// Solves a small dense symmetric system by Gaussian elimination with
/// partial pivoting; directions with a vanishing pivot get a zero
/// coefficient.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let m = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    let mut active = vec![true; m];
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() <= 1e-12 * scale {
            active[col] = false;
            continue;
        }
        a.swap(piv, col);
        b.swap(piv, col);
        for row in 0..m {
            if row != col {
                let factor = a[row][col] / a[col][col];
                if factor != 0.0 {
                    let (pivot, target) = if row < col {
                        let (lo, hi) = a.split_at_mut(col);
                        (&hi[0], &mut lo[row])
                    } else {
                        let (lo, hi) = a.split_at_mut(row);
                        (&lo[col], &mut hi[0])
                    };
                    for (x, p) in target[col..].iter_mut().zip(&pivot[col..]) {
                        *x -= factor * p;
                    }
                    b[row] -= factor * b[col];
                }
            }
        }
    }
    (0..m)
        .map(|i| if active[i] { b[i] / a[i][i] } else { 0.0 })
        .collect()
}

struct Profile {
    loglik: f64,
    sigma2: f64,
    beta: Vec<f64>,
    residuals: Vec<f64>,
    clamped: bool,
}

/// Likelihood with regression coefficients and innovation variance
/// concentrated out. `None` if the ARMA part is not stationary.
fn profile(w: &[f64], design: &[Vec<f64>], ar: &[f64], ma: &[f64]) -> Option<Profile> {
    let n = w.len();
    let form = StateSpaceForm::new(ar, ma);
    let mut columns: Vec<&[f64]> = Vec::with_capacity(design.len() + 1);
    columns.push(w);
    columns.extend(design.iter().map(Vec::as_slice));
    let out = kalman::filter(&form, &columns)?;
    let f = &out.variances;
    let m = design.len();

    let beta = if m == 0 {
        vec![]
    } else {
        let mut xtx = vec![vec![0.0; m]; m];
        let mut xty = vec![0.0; m];
        for t in 0..n {
            for a in 0..m {
                let xa = out.innovations[a + 1][t] / f[t];
                xty[a] += xa * out.innovations[0][t];
                for b in 0..m {
                    xtx[a][b] += xa * out.innovations[b + 1][t];
                }
            }
        }
        solve_small(xtx, xty)
    };
    let residuals: Vec<f64> = (0..n)
        .map(|t| out.innovations[0][t] - (0..m).map(|a| beta[a] * out.innovations[a + 1][t]).sum::<f64>())
        .collect();
    let ssq: f64 = residuals.iter().zip(f).map(|(v, ft)| v * v / ft).sum();
    let log_det: f64 = f.iter().map(|v| v.ln()).sum();
    let nf = n as f64;
    let raw = ssq / nf;
    let clamped = !(raw >= SIGMA2_FLOOR);
    let sigma2 = if clamped { SIGMA2_FLOOR } else { raw };
    let loglik = -0.5 * (nf * (2.0 * std::f64::consts::PI).ln() + nf * sigma2.ln() + log_det + ssq / sigma2);
    Some(Profile {
        loglik,
        sigma2,
        beta,
        residuals,
        clamped,
    })
}

/// Exact Gaussian log-likelihood at fixed parameters. `beta` follows the
/// regressor order of the table in the module docs.
pub fn log_likelihood(
    series: &[f64],
    spec: &ArimaSpec,
    ar: &[f64],
    ma: &[f64],
    beta: &[f64],
    sigma2: f64,
) -> Result<f64, ArimaError> {
    spec.validate()?;
    if ar.len() != spec.p || ma.len() != spec.q || beta.len() != spec.n_regressors() {
        return Err(ArimaError::InvalidSpec("parameter lengths do not match the spec".into()));
    }
    let w = difference(series, spec.d);
    let u: Vec<f64> = w
        .iter()
        .enumerate()
        .map(|(t, v)| v - spec.regressors(t).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>())
        .collect();
    let form = StateSpaceForm::new(ar, ma);
    let out = kalman::filter(&form, &[&u]).ok_or_else(|| ArimaError::InvalidSpec("non-stationary AR part".into()))?;
    Ok(out
        .innovations[0]
        .iter()
        .zip(&out.variances)
        .map(|(v, f)| -0.5 * ((2.0 * std::f64::consts::PI * sigma2 * f).ln() + v * v / (sigma2 * f)))
        .sum())
}

fn aicc(loglik: f64, k: usize, n: usize) -> f64 {
    let (k, n) = (k as f64, n as f64);
    if n - k - 1.0 <= 0.0 {
        return f64::INFINITY;
    }
    -2.0 * loglik + 2.0 * k + 2.0 * k * (k + 1.0) / (n - k - 1.0)
}

fn autocov(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    (0..n.saturating_sub(lag))
        .map(|t| (x[t] - mean) * (x[t + lag] - mean))
        .sum::<f64>()
        / n as f64
}

/// Yule-Walker AR start; zeros when the sample is degenerate.
fn yule_walker(w: &[f64], p: usize) -> Vec<f64> {
    let g0 = autocov(w, 0);
    if p == 0 || !(g0 > 1e-300) {
        return vec![0.0; p];
    }
    let r1 = autocov(w, 1) / g0;
    if p == 1 {
        return vec![r1];
    }
    let r2 = autocov(w, 2) / g0;
    let denom = 1.0 - r1 * r1;
    if denom.abs() < 1e-8 {
        return vec![r1, 0.0];
    }
    vec![r1 * (1.0 - r2) / denom, (r2 - r1 * r1) / denom]
}

/// Fits `spec` by exact maximum likelihood.
///
/// Restart policy: Nelder-Mead runs from three starting points (zeros,
/// Yule-Walker AR with zero MA, and alternating +/-0.5 in the transformed
/// scale) and then once more from the best optimum. The fit fails with
/// [`ArimaError::NonConvergence`] only if none of these runs meets the
/// 1e-8 log-likelihood tolerance.
pub fn fit(series: &[f64], spec: ArimaSpec) -> Result<ArimaFit, ArimaError> {
    spec.validate()?;
    if series.iter().any(|v| !v.is_finite()) {
        return Err(ArimaError::NonFinite);
    }
    if series.len() < spec.min_len() {
        return Err(ArimaError::SeriesTooShort {
            spec: spec.to_string(),
            len: series.len(),
            needed: spec.min_len(),
        });
    }
    let w = difference(series, spec.d);
    let n = w.len();
    let m = spec.n_regressors();
    let design: Vec<Vec<f64>> = {
        let rows: Vec<Vec<f64>> = (0..n).map(|t| spec.regressors(t)).collect();
        (0..m).map(|c| rows.iter().map(|r| r[c]).collect()).collect()
    };

    let dim = spec.p + spec.q;
    let objective = |x: &[f64]| -> f64 {
        let (ar, ma) = transform(&spec, x);
        profile(&w, &design, &ar, &ma).map_or(f64::INFINITY, |p| -p.loglik)
    };

    let (x_best, converged) = if dim == 0 {
        (vec![], true)
    } else {
        let nm = NelderMead::default();
        let yw = yule_walker(&w, spec.p);
        let starts = [
            vec![0.0; dim],
            inverse_transform(&spec, &yw, &vec![0.0; spec.q]),
            (0..dim).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect(),
        ];
        let mut best: Option<optim::Minimum> = None;
        let mut any_converged = false;
        for s in &starts {
            let m = nm.minimize(objective, s);
            any_converged |= m.converged;
            if best.as_ref().is_none_or(|b| m.value < b.value) {
                best = Some(m);
            }
        }
        let best = best.expect("three starts");
        let polish = nm.minimize(objective, &best.x);
        let chosen = if polish.value <= best.value { polish } else { best };
        if !chosen.value.is_finite() || !(any_converged || chosen.converged) {
            return Err(ArimaError::NonConvergence(spec.to_string()));
        }
        (chosen.x, true)
    };

    let (ar, ma) = transform(&spec, &x_best);
    let prof = profile(&w, &design, &ar, &ma).ok_or_else(|| ArimaError::NonConvergence(spec.to_string()))?;
    let mut warnings = Vec::new();
    if prof.clamped {
        warnings.push(format!(
            "innovation variance clamped to {SIGMA2_FLOOR:e}: series is (nearly) deterministic under {spec}"
        ));
    }
    let mut beta = prof.beta.into_iter();
    let mean = if spec.d == 0 { beta.next().unwrap_or(0.0) } else { 0.0 };
    let drift_coeff = if spec.drift { beta.next().unwrap_or(0.0) } else { 0.0 };
    let seasonal_coeffs: Vec<f64> = beta.collect();
    Ok(ArimaFit {
        spec,
        ar_coeffs: ar,
        ma_coeffs: ma,
        mean,
        drift_coeff,
        seasonal_coeffs,
        sigma2: prof.sigma2,
        loglik: prof.loglik,
        aicc: aicc(prof.loglik, spec.n_params(), n),
        n_obs: n,
        residuals: prof.residuals,
        converged,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectOptions {
    /// Add quarterly seasonal terms to every grid candidate.
    pub seasonal: bool,
}

/// Candidates with an AR or MA root closer to the unit circle than this
/// are left out of selection: their likelihood peaks on the boundary of
/// the stationary or invertible region, typically a moving-average root
/// cancelling an over-fitted trend or AR term.
pub const MIN_ROOT_MODULUS: f64 = 1.01;

/// Smallest modulus among the roots of `1 + c1 z + c2 z^2` (degree <= 2).
fn min_root_modulus(c: &[f64]) -> f64 {
    match *c {
        [] | [0.0] | [0.0, 0.0] => f64::INFINITY,
        [c1] | [c1, 0.0] => 1.0 / c1.abs(),
        [c1, c2] => {
            // Roots of c2 z^2 + c1 z + 1; their product is 1 / c2.
            let disc = c1 * c1 - 4.0 * c2;
            if disc < 0.0 {
                (1.0 / c2.abs()).sqrt()
            } else {
                let r = disc.sqrt();
                let q = -0.5 * (c1 + c1.signum() * r);
                let (a, b) = (q / c2, if q != 0.0 { 1.0 / q } else { f64::INFINITY });
                a.abs().min(b.abs())
            }
        }
        _ => unreachable!("orders are at most 2"),
    }
}

/// Smallest root modulus of the AR polynomial `1 - phi(z)` and the MA
/// polynomial `1 + theta(z)`.
pub fn min_root(fit: &ArimaFit) -> f64 {
    let ar: Vec<f64> = fit.ar_coeffs.iter().map(|p| -p).collect();
    min_root_modulus(&ar).min(min_root_modulus(&fit.ma_coeffs))
}

/// Fits every grid candidate the series is long enough for and returns
/// the one with the smallest AICc, skipping fits with a root within
/// [`MIN_ROOT_MODULUS`] of the unit circle. Ties go to fewer parameters,
/// then to lower `p`.
pub fn select(series: &[f64], opts: SelectOptions) -> Result<ArimaFit, ArimaError> {
    const MIN_LEN: usize = 6;
    if series.len() < MIN_LEN {
        return Err(ArimaError::SeriesTooShort {
            spec: "order selection".into(),
            len: series.len(),
            needed: MIN_LEN,
        });
    }
    let mut best: Option<ArimaFit> = None;
    for spec in ArimaSpec::grid(opts.seasonal) {
        if series.len() < spec.min_len() {
            continue;
        }
        let Ok(f) = fit(series, spec) else { continue };
        if !f.aicc.is_finite() || min_root(&f) < MIN_ROOT_MODULUS {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let tol = 1e-9 * b.aicc.abs().max(1.0);
                if f.aicc < b.aicc - tol {
                    true
                } else if f.aicc <= b.aicc + tol {
                    (f.spec.n_params(), f.spec.p) < (b.spec.n_params(), b.spec.p)
                } else {
                    false
                }
            }
        };
        if better {
            best = Some(f);
        }
    }
    best.ok_or(ArimaError::AllFitsFailed)
}

/// Mean and variance paths `1..=f` steps past the end of the series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub horizon: usize,
    pub mean_path: Vec<f64>,
    pub variance_path: Vec<f64>,
}

impl ForecastResult {
    /// Normal-approximation interval at `z` standard errors.
    pub fn interval(&self, z: f64) -> Vec<(f64, f64)> {
        self.mean_path
            .iter()
            .zip(&self.variance_path)
            .map(|(m, v)| (m - z * v.sqrt(), m + z * v.sqrt()))
            .collect()
    }
}

/// MA(infinity) weights `psi_0..psi_{n-1}` of the ARMA part.
fn psi_weights(ar: &[f64], ma: &[f64], n: usize) -> Vec<f64> {
    let mut psi = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = if j == 0 {
            1.0
        } else {
            ma.get(j - 1).copied().unwrap_or(0.0)
        };
        for (i, phi) in ar.iter().enumerate() {
            if j > i {
                v += phi * psi[j - i - 1];
            }
        }
        psi.push(v);
    }
    psi
}

/// Minimum-MSE forecast from `fit`, given the series it was fitted on.
pub fn forecast(fit: &ArimaFit, series: &[f64], horizon: usize) -> Result<ForecastResult, ArimaError> {
    let spec = fit.spec;
    if horizon == 0 {
        return Err(ArimaError::InvalidSpec("forecast horizon must be positive".into()));
    }
    if series.len() <= spec.d {
        return Err(ArimaError::SeriesTooShort {
            spec: spec.to_string(),
            len: series.len(),
            needed: spec.d + 1,
        });
    }
    let w = difference(series, spec.d);
    let n = w.len();
    let beta = fit.beta();
    let xb = |t: usize| spec.regressors(t).iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>();
    let u: Vec<f64> = (0..n).map(|t| w[t] - xb(t)).collect();
    let form = StateSpaceForm::new(&fit.ar_coeffs, &fit.ma_coeffs);
    let out = kalman::filter(&form, &[&u]).ok_or_else(|| ArimaError::InvalidSpec("non-stationary AR part".into()))?;
    let u_hat = kalman::project(&form, out.next_state[0], horizon);
    let w_hat: Vec<f64> = (0..horizon).map(|h| xb(n + h) + u_hat[h]).collect();

    let mut psi = psi_weights(&fit.ar_coeffs, &fit.ma_coeffs, horizon);
    let mean_path = if spec.d == 0 {
        w_hat
    } else {
        let mut level = *series.last().expect("non-empty");
        let mut acc = 0.0;
        for p in psi.iter_mut() {
            acc += *p;
            *p = acc;
        }
        w_hat
            .iter()
            .map(|dw| {
                level += dw;
                level
            })
            .collect()
    };
    let mut cum = 0.0;
    let variance_path = psi
        .iter()
        .map(|p| {
            cum += p * p;
            fit.sigma2 * cum
        })
        .collect();
    Ok(ForecastResult {
        horizon,
        mean_path,
        variance_path,
    })
}
