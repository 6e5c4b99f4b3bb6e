//! Exact Gaussian likelihood of a stationary ARMA(p, q) process via the
//! Kalman filter on Harvey's state-space form, with state dimension
//! `r = max(p, q + 1) <= 2`.
//!
//! Several data columns can be filtered in one pass: the gains and
//! prediction variances do not depend on the data, which lets regression
//! coefficients be concentrated out by GLS on the innovations.

use nalgebra::{Matrix4, Vector4};

pub(crate) const MAX_STATE: usize = 2;
const F_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub(crate) struct StateSpaceForm {
    r: usize,
    transition: [[f64; MAX_STATE]; MAX_STATE],
    noise: [f64; MAX_STATE],
}

impl StateSpaceForm {
    pub fn new(ar: &[f64], ma: &[f64]) -> Self {
        let r = ar.len().max(ma.len() + 1);
        assert!(r <= MAX_STATE, "ARMA order above the supported grid");
        let mut transition = [[0.0; MAX_STATE]; MAX_STATE];
        for (i, phi) in ar.iter().enumerate() {
            transition[i][0] = *phi;
        }
        for (i, row) in transition.iter_mut().enumerate().take(r - 1) {
            row[i + 1] = 1.0;
        }
        let mut noise = [0.0; MAX_STATE];
        noise[0] = 1.0;
        for (i, theta) in ma.iter().enumerate() {
            noise[i + 1] = *theta;
        }
        Self { r, transition, noise }
    }

    /// Stationary state covariance `P = T P T' + R R'` (unit innovation
    /// variance). `None` when the AR part is not stationary.
    fn initial_covariance(&self) -> Option<[[f64; MAX_STATE]; MAX_STATE]> {
        let t = &self.transition;
        let rr = &self.noise;
        if self.r == 1 {
            let denom = 1.0 - t[0][0] * t[0][0];
            if denom <= 1e-12 {
                return None;
            }
            let mut p = [[0.0; MAX_STATE]; MAX_STATE];
            p[0][0] = rr[0] * rr[0] / denom;
            return Some(p);
        }
        // vec(P) = (I - T (x) T)^{-1} vec(R R'), row-major vec.
        let mut a = Matrix4::<f64>::identity();
        let mut b = Vector4::<f64>::zeros();
        for i in 0..2 {
            for j in 0..2 {
                let row = i * 2 + j;
                b[row] = rr[i] * rr[j];
                for k in 0..2 {
                    for l in 0..2 {
                        a[(row, k * 2 + l)] -= t[i][k] * t[j][l];
                    }
                }
            }
        }
        let x = a.lu().solve(&b)?;
        let p = [[x[0], x[1]], [x[2], x[3]]];
        if !(p[0][0] > 0.0 && p[0][0].is_finite()) {
            return None;
        }
        Some(p)
    }
}

/// Innovations of each column and their shared prediction variances.
pub(crate) struct FilterOutput {
    /// `innovations[c][t]`
    pub innovations: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    /// One-step-ahead predicted state for each column after the last
    /// observation.
    pub next_state: Vec<[f64; MAX_STATE]>,
}

/// Runs the filter over `columns`, all of length `n`. Returns `None` for a
/// non-stationary AR part.
pub(crate) fn filter(form: &StateSpaceForm, columns: &[&[f64]]) -> Option<FilterOutput> {
    let r = form.r;
    let t = &form.transition;
    let rr = &form.noise;
    let n = columns.first().map_or(0, |c| c.len());
    let mut p = form.initial_covariance()?;
    let mut states = vec![[0.0; MAX_STATE]; columns.len()];
    let mut innovations = vec![Vec::with_capacity(n); columns.len()];
    let mut variances = Vec::with_capacity(n);

    for step in 0..n {
        let f = p[0][0].max(F_FLOOR);
        variances.push(f);
        let mut gain = [0.0; MAX_STATE];
        for (i, g) in gain.iter_mut().enumerate().take(r) {
            *g = p[i][0] / f;
        }
        for (c, col) in columns.iter().enumerate() {
            let a = &mut states[c];
            let v = col[step] - a[0];
            innovations[c].push(v);
            let mut filtered = [0.0; MAX_STATE];
            for i in 0..r {
                filtered[i] = a[i] + gain[i] * v;
            }
            for i in 0..r {
                a[i] = (0..r).map(|k| t[i][k] * filtered[k]).sum();
            }
        }
        // P_{t|t} = P - P Z' Z P / F, then P_{t+1} = T P_{t|t} T' + R R'.
        let mut pf = [[0.0; MAX_STATE]; MAX_STATE];
        for i in 0..r {
            for j in 0..r {
                pf[i][j] = p[i][j] - p[i][0] * p[0][j] / f;
            }
        }
        let mut tp = [[0.0; MAX_STATE]; MAX_STATE];
        for i in 0..r {
            for j in 0..r {
                tp[i][j] = (0..r).map(|k| t[i][k] * pf[k][j]).sum();
            }
        }
        for i in 0..r {
            for j in 0..r {
                p[i][j] = (0..r).map(|k| tp[i][k] * t[j][k]).sum::<f64>() + rr[i] * rr[j];
            }
        }
    }
    Some(FilterOutput {
        innovations,
        variances,
        next_state: states,
    })
}

/// Forecast of the zero-mean ARMA component `h = 1..=horizon` steps past
/// the last observation, from the predicted state.
pub(crate) fn project(form: &StateSpaceForm, state: [f64; MAX_STATE], horizon: usize) -> Vec<f64> {
    let r = form.r;
    let mut a = state;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        out.push(a[0]);
        let mut next = [0.0; MAX_STATE];
        for (i, slot) in next.iter_mut().enumerate().take(r) {
            *slot = (0..r).map(|k| form.transition[i][k] * a[k]).sum();
        }
        a = next;
    }
    out
}
