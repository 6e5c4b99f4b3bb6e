//! Stationary analysis of a three-state labour market with temporary
//! employment `T`, permanent employment `P` and unemployment `U`.
//!
//! States are taken by position: row/column 0 is `T`, 1 is `P`, 2 is `U`,
//! whatever the labels. The equilibrium unemployment share is
//!
//! ```text
//!          m(T,U)(1 - m(P,P)) + m(T,P) m(P,U)
//! pi_U = --------------------------------------
//!                          D
//!
//! D = (1 - m(P,P))(1 + m(T,U) - m(U,U))
//!   + m(T,P)(1 + m(P,U) - m(U,U))
//!   - m(U,P)(m(P,U) - m(T,U))
//! ```
//!
//! and its partial derivative with respect to `m(T,P)`, holding `m(T,U)`
//! fixed so that `m(T,T)` absorbs the change, is
//!
//! ```text
//! (m(P,U) - m(T,U)) ((1 - m(P,P)) m(U,T) + m(U,P) m(P,T)) / D^2
//! ```
//!
//! Its sign is that of `m(P,U) - m(T,U)` whenever the second factor is
//! positive: moving temporary workers into permanent jobs lowers
//! equilibrium unemployment exactly when permanent jobs are the safer
//! ones, even though no flow into or out of `U` has changed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::EquilibriumError;
use crate::flow::{ShareVector, TransitionMatrix};

const T: usize = 0;
const P: usize = 1;
const U: usize = 2;

/// Agreement required between the linear solve and power iteration.
pub const SOLVER_TOL: f64 = 1e-10;
/// Agreement required between the closed form and the stationary solve.
pub const CLOSED_FORM_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeStateChain {
    pub matrix: TransitionMatrix,
    /// Constant population size.
    pub population: f64,
}

impl ThreeStateChain {
    pub fn new(matrix: TransitionMatrix, population: f64) -> Result<Self, EquilibriumError> {
        if matrix.dim() != 3 {
            return Err(EquilibriumError::NotThreeStates(matrix.dim()));
        }
        Ok(Self { matrix, population })
    }

    fn m(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }
}

fn positive_graph(m: &TransitionMatrix) -> Vec<Vec<usize>> {
    let k = m.dim();
    (0..k).map(|i| (0..k).filter(|&j| m.get(i, j) > 0.0).collect()).collect()
}

fn bfs_levels(adj: &[Vec<usize>], reversed: bool) -> Vec<Option<usize>> {
    let k = adj.len();
    let mut level = vec![None; k];
    level[0] = Some(0);
    let mut queue = std::collections::VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        let next: Vec<usize> = if reversed {
            (0..k).filter(|&v| adj[v].contains(&u)).collect()
        } else {
            adj[u].clone()
        };
        for v in next {
            if level[v].is_none() {
                level[v] = Some(level[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Checks that the graph of positive entries is strongly connected and
/// aperiodic.
pub fn check_ergodic(m: &TransitionMatrix) -> Result<(), EquilibriumError> {
    let adj = positive_graph(m);
    let forward = bfs_levels(&adj, false);
    let backward = bfs_levels(&adj, true);
    if forward.iter().chain(&backward).any(Option::is_none) {
        return Err(EquilibriumError::NotIrreducible);
    }
    // The period is the gcd of level(u) + 1 - level(v) over all edges.
    let mut period = 0;
    for (u, targets) in adj.iter().enumerate() {
        for &v in targets {
            let (lu, lv) = (forward[u].unwrap(), forward[v].unwrap());
            period = gcd(period, (lu + 1).abs_diff(lv));
        }
    }
    if period != 1 {
        return Err(EquilibriumError::NotAperiodic(period));
    }
    Ok(())
}

/// Solves `pi M = pi`, `sum(pi) = 1` with one balance equation replaced
/// by the normalisation.
fn linear_solve(m: &TransitionMatrix) -> Option<Vec<f64>> {
    let k = m.dim();
    // (M' - I) pi' = 0
    let mut a = DMatrix::<f64>::from_fn(k, k, |i, j| m.get(j, i) - if i == j { 1.0 } else { 0.0 });
    let mut b = DVector::<f64>::zeros(k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    b[k - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    Some(x.iter().copied().collect())
}

/// `start * M^(2^n - 1)` by repeated squaring, until successive iterates
/// agree to rounding.
fn power_iteration(m: &TransitionMatrix, start: &[f64]) -> Vec<f64> {
    let k = m.dim();
    let mut p = DMatrix::<f64>::from_row_slice(k, k, m.entries());
    let mut pi = DVector::from_row_slice(start);
    for _ in 0..64 {
        let mut next = p.transpose() * &pi;
        next /= next.sum();
        let diff = (&next - &pi).amax();
        pi = next;
        if diff <= 4.0 * f64::EPSILON {
            break;
        }
        p = &p * &p;
        // Rounding drift in the row sums would otherwise compound with
        // every squaring.
        for mut row in p.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
    }
    pi.iter().copied().collect()
}

/// The unique stationary distribution of an ergodic chain, any `K`.
pub fn stationary_distribution(m: &TransitionMatrix) -> Result<ShareVector, EquilibriumError> {
    check_ergodic(m)?;
    let k = m.dim();
    let solved = linear_solve(m).ok_or(EquilibriumError::NotIrreducible)?;
    let uniform = vec![1.0 / k as f64; k];
    let iterated = power_iteration(m, &uniform);
    let gap = solved
        .iter()
        .zip(&iterated)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if !(gap <= SOLVER_TOL) {
        return Err(EquilibriumError::SolverDisagreement(gap));
    }
    let clean: Vec<f64> = solved.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clean.iter().sum();
    Ok(ShareVector::new(
        m.space().clone(),
        m.period(),
        clean.iter().map(|v| v / total).collect(),
    )?)
}

fn denominator(c: &ThreeStateChain) -> f64 {
    let m = |i, j| c.m(i, j);
    (1.0 - m(P, P)) * (1.0 + m(T, U) - m(U, U)) + m(T, P) * (1.0 + m(P, U) - m(U, U))
        - m(U, P) * (m(P, U) - m(T, U))
}

/// Equilibrium unemployment share from the closed form.
pub fn closed_form_unemployment(chain: &ThreeStateChain) -> Result<f64, EquilibriumError> {
    check_ergodic(&chain.matrix)?;
    let m = |i, j| chain.m(i, j);
    Ok((m(T, U) * (1.0 - m(P, P)) + m(T, P) * m(P, U)) / denominator(chain))
}

/// `m(P,U) - m(T,U)`, which fixes the sign of the derivative.
pub fn sign_term(chain: &ThreeStateChain) -> f64 {
    chain.m(P, U) - chain.m(T, U)
}

/// `(1 - m(P,P)) m(U,T) + m(U,P) m(P,T)`, the second derivative factor.
pub fn bracket_factor(chain: &ThreeStateChain) -> f64 {
    let m = |i, j| chain.m(i, j);
    (1.0 - m(P, P)) * m(U, T) + m(U, P) * m(P, T)
}

/// Partial derivative of the equilibrium unemployment share with respect
/// to `m(T,P)`, with `m(T,T)` compensating.
pub fn derivative_wrt_mtp(chain: &ThreeStateChain) -> Result<f64, EquilibriumError> {
    check_ergodic(&chain.matrix)?;
    let d = denominator(chain);
    Ok(sign_term(chain) * bracket_factor(chain) / (d * d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub stationary: ShareVector,
    pub closed_form_pi_u: f64,
    pub derivative_pi_u_wrt_mtp: f64,
    pub sign_term: f64,
    pub bracket_factor: f64,
    /// Equilibrium head counts `population * pi`.
    pub stocks: Vec<f64>,
}

/// Stationary solve, closed form and derivative, with the closed form
/// checked against the solve.
pub fn analyze(chain: &ThreeStateChain) -> Result<EquilibriumResult, EquilibriumError> {
    let stationary = stationary_distribution(&chain.matrix)?;
    let closed = closed_form_unemployment(chain)?;
    let numeric = stationary.get(U);
    if !((closed - numeric).abs() <= CLOSED_FORM_TOL) {
        return Err(EquilibriumError::ClosedFormMismatch { closed, numeric });
    }
    Ok(EquilibriumResult {
        stocks: stationary.values().iter().map(|v| v * chain.population).collect(),
        stationary,
        closed_form_pi_u: closed,
        derivative_pi_u_wrt_mtp: derivative_wrt_mtp(chain)?,
        sign_term: sign_term(chain),
        bracket_factor: bracket_factor(chain),
    })
}

/// Moves `delta` of probability mass from `m(T,T)` to `m(T,P)`; the `P`
/// and `U` rows are untouched.
pub fn perturb_mtp(chain: &ThreeStateChain, delta: f64) -> Result<ThreeStateChain, EquilibriumError> {
    let mut rows = chain.matrix.rows();
    let (tt, tp) = (rows[T][T] - delta, rows[T][P] + delta);
    if !(0.0..=1.0).contains(&tt) || !(0.0..=1.0).contains(&tp) {
        return Err(EquilibriumError::InvalidPerturbation { delta });
    }
    rows[T][T] = tt;
    rows[T][P] = tp;
    let matrix = TransitionMatrix::from_rows(chain.matrix.space().clone(), chain.matrix.period(), &rows)?;
    Ok(ThreeStateChain {
        matrix,
        population: chain.population,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionEffect {
    pub delta: f64,
    pub sign_term: f64,
    pub pi_u_before: f64,
    pub pi_u_after: f64,
    pub change: f64,
    pub unemployed_before: f64,
    pub unemployed_after: f64,
    /// First-order prediction `delta * derivative`.
    pub linearized_change: f64,
}

/// Equilibrium unemployment before and after shifting `delta` from
/// `m(T,T)` to `m(T,P)`, with no change to any flow into or out of `U`.
pub fn composition_effect(chain: &ThreeStateChain, delta: f64) -> Result<CompositionEffect, EquilibriumError> {
    let before = analyze(chain)?;
    let shifted = perturb_mtp(chain, delta)?;
    let after = analyze(&shifted)?;
    let (b, a) = (before.stationary.get(U), after.stationary.get(U));
    Ok(CompositionEffect {
        delta,
        sign_term: before.sign_term,
        pi_u_before: b,
        pi_u_after: a,
        change: a - b,
        unemployed_before: b * chain.population,
        unemployed_after: a * chain.population,
        linearized_change: delta * before.derivative_pi_u_wrt_mtp,
    })
}
