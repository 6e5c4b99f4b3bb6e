//! State spaces, share vectors and row-stochastic transition matrices.
//!
//! Orientation is fixed crate-wide: matrix rows are origin states, columns
//! are destination states, and shares are row vectors, so one quarter of
//! dynamics is `pi_t = pi_{t-1} * M_t`.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::FlowError;
use crate::quarter::QuarterId;

/// Slack allowed when constructing shares and matrices from raw input.
pub const CONSTRUCT_TOL: f64 = 1e-9;
/// Slack allowed on the result of floating-point products.
pub const ARITH_TOL: f64 = 1e-8;

/// The ordered set of labour-market states.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StateSpace {
    labels: Arc<[String]>,
}

impl StateSpace {
    pub fn new<S: AsRef<str>>(labels: &[S]) -> Result<Self, FlowError> {
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        if labels.len() < 2 {
            return Err(FlowError::InvalidStateSpace(format!(
                "need at least 2 states, got {}",
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(FlowError::InvalidStateSpace("empty label".into()));
            }
            if labels[..i].contains(l) {
                return Err(FlowError::InvalidStateSpace(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self {
            labels: labels.into(),
        })
    }

    /// Self-employed, temporary, permanent, unemployed, inactive.
    pub fn canonical() -> Self {
        Self::new(&["SE", "TE", "PE", "U", "IN"]).expect("canonical labels are valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub(crate) fn ensure_same(&self, other: &StateSpace) -> Result<(), FlowError> {
        if self == other {
            Ok(())
        } else {
            Err(FlowError::StateSpaceMismatch {
                left: self.labels.to_vec(),
                right: other.labels.to_vec(),
            })
        }
    }
}

impl TryFrom<Vec<String>> for StateSpace {
    type Error = FlowError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(&v)
    }
}

impl From<StateSpace> for Vec<String> {
    fn from(s: StateSpace) -> Self {
        s.labels.to_vec()
    }
}

/// Clamp round-off negatives and values just above one, reject anything else.
fn check_unit_interval(values: &mut [f64], tol: f64, offset: usize) -> Result<(), FlowError> {
    for (k, v) in values.iter_mut().enumerate() {
        if !v.is_finite() || *v < -tol || *v > 1.0 + tol {
            return Err(FlowError::EntryOutOfRange {
                index: offset + k,
                value: *v,
            });
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(())
}

/// Population shares across states in one quarter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShareJson", into = "ShareJson")]
pub struct ShareVector {
    space: StateSpace,
    period: QuarterId,
    values: Vec<f64>,
}

impl ShareVector {
    pub fn new(space: StateSpace, period: QuarterId, values: Vec<f64>) -> Result<Self, FlowError> {
        Self::with_tolerance(space, period, values, CONSTRUCT_TOL)
    }

    pub(crate) fn with_tolerance(
        space: StateSpace,
        period: QuarterId,
        mut values: Vec<f64>,
        tol: f64,
    ) -> Result<Self, FlowError> {
        if values.len() != space.len() {
            return Err(FlowError::Dimension {
                expected: space.len(),
                found: values.len(),
            });
        }
        check_unit_interval(&mut values, tol, 0)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(FlowError::SharesNotNormalized { sum });
        }
        if sum != 1.0 {
            values.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self {
            space,
            period,
            values,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn period(&self) -> QuarterId {
        self.period
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn with_period(mut self, period: QuarterId) -> Self {
        self.period = period;
        self
    }
}

#[derive(Serialize, Deserialize)]
struct ShareJson {
    space: StateSpace,
    period: QuarterId,
    entries: Vec<f64>,
}

impl TryFrom<ShareJson> for ShareVector {
    type Error = FlowError;

    fn try_from(j: ShareJson) -> Result<Self, Self::Error> {
        ShareVector::new(j.space, j.period, j.entries)
    }
}

impl From<ShareVector> for ShareJson {
    fn from(s: ShareVector) -> Self {
        ShareJson {
            space: s.space,
            period: s.period,
            entries: s.values,
        }
    }
}

/// Row-stochastic matrix of quarter-on-quarter transition probabilities.
///
/// `period` is the destination quarter `t` of the `[t-1, t]` transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct TransitionMatrix {
    space: StateSpace,
    period: QuarterId,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    /// Builds from row-major entries, renormalizing rows whose sum is off
    /// by less than [`CONSTRUCT_TOL`].
    pub fn new(space: StateSpace, period: QuarterId, entries: Vec<f64>) -> Result<Self, FlowError> {
        Self::with_tolerance(space, period, entries, CONSTRUCT_TOL)
    }

    pub fn from_rows(
        space: StateSpace,
        period: QuarterId,
        rows: &[Vec<f64>],
    ) -> Result<Self, FlowError> {
        let k = space.len();
        if rows.len() != k {
            return Err(FlowError::Dimension {
                expected: k,
                found: rows.len(),
            });
        }
        let mut entries = Vec::with_capacity(k * k);
        for r in rows {
            if r.len() != k {
                return Err(FlowError::Dimension {
                    expected: k,
                    found: r.len(),
                });
            }
            entries.extend_from_slice(r);
        }
        Self::new(space, period, entries)
    }

    pub(crate) fn with_tolerance(
        space: StateSpace,
        period: QuarterId,
        mut entries: Vec<f64>,
        tol: f64,
    ) -> Result<Self, FlowError> {
        let k = space.len();
        if entries.len() != k * k {
            return Err(FlowError::Dimension {
                expected: k * k,
                found: entries.len(),
            });
        }
        check_unit_interval(&mut entries, tol, 0)?;
        for (row, chunk) in entries.chunks_mut(k).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(FlowError::RowNotStochastic { row, sum });
            }
            if sum != 1.0 {
                chunk.iter_mut().for_each(|v| *v /= sum);
            }
        }
        Ok(Self {
            space,
            period,
            entries,
        })
    }

    pub fn identity(space: StateSpace, period: QuarterId) -> Self {
        let k = space.len();
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        Self {
            space,
            period,
            entries,
        }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn period(&self) -> QuarterId {
        self.period
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.dim() + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let k = self.dim();
        &self.entries[from * k..(from + 1) * k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim()).map(<[f64]>::to_vec).collect()
    }

    pub fn with_period(mut self, period: QuarterId) -> Self {
        self.period = period;
        self
    }

    /// Matrix as CSV: header `from,<labels>`, one row per origin state.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("from");
        for l in self.space.labels() {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for i in 0..self.dim() {
            out.push_str(self.space.label(i));
            for v in self.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`TransitionMatrix::to_csv`] output. Rows may appear in any
    /// order but must cover every header label exactly once.
    pub fn from_csv(text: &str, period: QuarterId) -> Result<Self, FlowError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| FlowError::Format("empty matrix file".into()))?;
        let labels: Vec<&str> = header.split(',').map(str::trim).skip(1).collect();
        let space = StateSpace::new(&labels)?;
        let k = space.len();
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; k];
        for line in lines {
            let mut fields = line.split(',').map(str::trim);
            let origin = fields.next().unwrap_or_default();
            let i = space
                .index_of(origin)
                .ok_or_else(|| FlowError::Format(format!("unknown origin state {origin:?}")))?;
            let vals = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| FlowError::Format(format!("bad number {f:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if rows[i].replace(vals).is_some() {
                return Err(FlowError::Format(format!("duplicate row {origin:?}")));
            }
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| FlowError::Format(format!("missing row {}", space.label(i)))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(space, period, &rows)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    space: StateSpace,
    period: QuarterId,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<MatrixJson> for TransitionMatrix {
    type Error = FlowError;

    fn try_from(j: MatrixJson) -> Result<Self, Self::Error> {
        TransitionMatrix::from_rows(j.space, j.period, &j.entries)
    }
}

impl From<TransitionMatrix> for MatrixJson {
    fn from(m: TransitionMatrix) -> Self {
        MatrixJson {
            entries: m.rows(),
            space: m.space,
            period: m.period,
        }
    }
}

/// Transition matrices over strictly consecutive quarters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixChain {
    matrices: Vec<TransitionMatrix>,
}

impl MatrixChain {
    pub fn new(matrices: Vec<TransitionMatrix>) -> Result<Self, FlowError> {
        for pair in matrices.windows(2) {
            pair[0].space.ensure_same(&pair[1].space)?;
            let expected = pair[0].period.succ();
            if pair[1].period != expected {
                return Err(FlowError::PeriodMismatch {
                    expected,
                    found: pair[1].period,
                });
            }
        }
        Ok(Self { matrices })
    }

    pub fn matrices(&self) -> &[TransitionMatrix] {
        &self.matrices
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn first_period(&self) -> Option<QuarterId> {
        self.matrices.first().map(TransitionMatrix::period)
    }

    pub fn last_period(&self) -> Option<QuarterId> {
        self.matrices.last().map(TransitionMatrix::period)
    }

    /// Sub-chain of the first `n` matrices.
    pub fn prefix(&self, n: usize) -> MatrixChain {
        MatrixChain {
            matrices: self.matrices[..n.min(self.len())].to_vec(),
        }
    }
}

/// One quarter of dynamics: `pi_t = pi_{t-1} * M_t`.
pub fn propagate(pi: &ShareVector, m: &TransitionMatrix) -> Result<ShareVector, FlowError> {
    pi.space.ensure_same(&m.space)?;
    let expected = pi.period.succ();
    if m.period != expected {
        return Err(FlowError::PeriodMismatch {
            expected,
            found: m.period,
        });
    }
    let k = m.dim();
    let mut out = vec![0.0; k];
    for (i, &share) in pi.values.iter().enumerate() {
        for (o, &p) in out.iter_mut().zip(m.row(i)) {
            *o += share * p;
        }
    }
    ShareVector::with_tolerance(pi.space.clone(), m.period, out, ARITH_TOL)
}

/// Share path obtained by propagating `pi` through each matrix in turn.
pub fn propagate_chain(pi: &ShareVector, chain: &MatrixChain) -> Result<Vec<ShareVector>, FlowError> {
    let mut path = Vec::with_capacity(chain.len());
    let mut cur = pi.clone();
    for m in chain.matrices() {
        cur = propagate(&cur, m)?;
        path.push(cur.clone());
    }
    Ok(path)
}

fn mat_mul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for l in 0..k {
            let a_il = a[i * k + l];
            if a_il == 0.0 {
                continue;
            }
            for j in 0..k {
                out[i * k + j] += a_il * b[l * k + j];
            }
        }
    }
    out
}

/// Ordered product `M_{t+1} * M_{t+2} * ... * M_{t+f}` of a chain; the
/// result carries the last period.
pub fn chain_product(chain: &MatrixChain) -> Result<TransitionMatrix, FlowError> {
    let first = chain.matrices.first().ok_or(FlowError::EmptyChain)?;
    let k = first.dim();
    let mut acc = first.entries.clone();
    for m in &chain.matrices[1..] {
        acc = mat_mul(&acc, &m.entries, k);
    }
    TransitionMatrix::with_tolerance(
        first.space.clone(),
        chain.last_period().expect("non-empty"),
        acc,
        ARITH_TOL,
    )
}

/// Entrywise difference of two transition matrices. Rows sum to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixDiff {
    pub space: StateSpace,
    pub entries: Vec<Vec<f64>>,
}

impl MatrixDiff {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from][to]
    }
}

pub fn matrix_difference(a: &TransitionMatrix, b: &TransitionMatrix) -> Result<MatrixDiff, FlowError> {
    a.space.ensure_same(&b.space)?;
    let k = a.dim();
    let entries = (0..k)
        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| x - y).collect())
        .collect();
    Ok(MatrixDiff {
        space: a.space.clone(),
        entries,
    })
}

/// `ln(p / (1 - p))`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of [`logit`].
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn q(s: &str) -> QuarterId {
        s.parse().unwrap()
    }

    fn two() -> StateSpace {
        StateSpace::new(&["A", "B"]).unwrap()
    }

    #[test]
    fn state_space_rules() {
        assert!(StateSpace::new(&["A"]).is_err());
        assert!(StateSpace::new(&["A", "A"]).is_err());
        assert!(StateSpace::new(&["A", ""]).is_err());
        assert_eq!(StateSpace::canonical().labels(), ["SE", "TE", "PE", "U", "IN"]);
    }

    #[test]
    fn propagate_identity_keeps_published_shares() {
        let space = StateSpace::canonical();
        let pi = ShareVector::new(
            space.clone(),
            q("2018Q3"),
            vec![0.125, 0.080, 0.380, 0.054, 0.361],
        )
        .unwrap();
        let out = propagate(&pi, &TransitionMatrix::identity(space, q("2018Q4"))).unwrap();
        for (a, b) in out.values().iter().zip(pi.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert_eq!(out.period(), q("2018Q4"));
    }

    #[test]
    fn propagate_two_state_by_hand() {
        let pi = ShareVector::new(two(), q("2018Q1"), vec![0.5, 0.5]).unwrap();
        let m = TransitionMatrix::from_rows(two(), q("2018Q2"), &[vec![0.9, 0.1], vec![0.2, 0.8]])
            .unwrap();
        let out = propagate(&pi, &m).unwrap();
        assert_abs_diff_eq!(out.get(0), 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(out.get(1), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn propagate_errors() {
        let pi = ShareVector::new(two(), q("2018Q1"), vec![0.5, 0.5]).unwrap();
        let m = TransitionMatrix::identity(two(), q("2018Q3"));
        assert!(matches!(propagate(&pi, &m), Err(FlowError::PeriodMismatch { .. })));
        let other = StateSpace::new(&["A", "C"]).unwrap();
        let m = TransitionMatrix::identity(other, q("2018Q2"));
        assert!(matches!(propagate(&pi, &m), Err(FlowError::StateSpaceMismatch { .. })));
    }

    #[test]
    fn chain_product_by_hand() {
        let a = TransitionMatrix::from_rows(two(), q("2018Q1"), &[vec![0.9, 0.1], vec![0.2, 0.8]])
            .unwrap();
        let b = TransitionMatrix::from_rows(two(), q("2018Q2"), &[vec![0.5, 0.5], vec![0.5, 0.5]])
            .unwrap();
        let p = chain_product(&MatrixChain::new(vec![a, b]).unwrap()).unwrap();
        for v in p.entries() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-15);
        }
        assert_eq!(p.period(), q("2018Q2"));
    }

    #[test]
    fn chain_of_identities() {
        let space = StateSpace::canonical();
        let chain = MatrixChain::new(
            (0..4)
                .map(|k| TransitionMatrix::identity(space.clone(), q("2018Q4").offset(k)))
                .collect(),
        )
        .unwrap();
        assert_eq!(
            chain_product(&chain).unwrap().entries(),
            TransitionMatrix::identity(space, q("2019Q3")).entries()
        );
    }

    #[test]
    fn chain_rejects_gaps_and_empty() {
        let a = TransitionMatrix::identity(two(), q("2018Q1"));
        let b = TransitionMatrix::identity(two(), q("2018Q3"));
        assert!(MatrixChain::new(vec![a, b]).is_err());
        assert_eq!(
            chain_product(&MatrixChain::new(vec![]).unwrap()),
            Err(FlowError::EmptyChain)
        );
    }

    #[test]
    fn difference_of_equal_is_zero() {
        let a = TransitionMatrix::from_rows(two(), q("2018Q1"), &[vec![0.9, 0.1], vec![0.2, 0.8]])
            .unwrap();
        let d = matrix_difference(&a, &a).unwrap();
        assert!(d.entries.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn published_te_row_difference_sums_to_zero() {
        // Fitted minus forecasted cumulative TE row as published.
        let row = [-0.001, -0.066, 0.081, -0.005, -0.009];
        assert_abs_diff_eq!(row.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constructor_renormalizes_small_violations_only() {
        let m = TransitionMatrix::from_rows(two(), q("2018Q1"), &[vec![0.5, 0.5 + 5e-10], vec![0.0, 1.0]])
            .unwrap();
        assert_eq!(m.row(0).iter().sum::<f64>(), 1.0);
        assert!(TransitionMatrix::from_rows(two(), q("2018Q1"), &[vec![0.5, 0.6], vec![0.0, 1.0]]).is_err());
        assert!(TransitionMatrix::from_rows(two(), q("2018Q1"), &[vec![1.1, -0.1], vec![0.0, 1.0]]).is_err());
        assert!(ShareVector::new(two(), q("2018Q1"), vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let space = StateSpace::canonical();
        let m = TransitionMatrix::from_rows(
            space.clone(),
            q("2018Q3"),
            &[
                vec![0.9, 0.02, 0.03, 0.02, 0.03],
                vec![0.01, 0.75, 0.1, 0.08, 0.06],
                vec![0.01, 0.01, 0.95, 0.01, 0.02],
                vec![0.02, 0.1, 0.05, 0.6, 0.23],
                vec![0.01, 0.02, 0.01, 0.04, 0.92],
            ],
        )
        .unwrap();
        let csv = m.to_csv();
        assert!(csv.starts_with("from,SE,TE,PE,U,IN\nSE,"));
        assert_eq!(TransitionMatrix::from_csv(&csv, q("2018Q3")).unwrap(), m);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.starts_with(r#"{"space":["SE","TE","PE","U","IN"],"period":"2018Q3","entries":[["#));
        assert_eq!(serde_json::from_str::<TransitionMatrix>(&json).unwrap(), m);
        let pi = ShareVector::new(space, q("2018Q3"), vec![0.2; 5]).unwrap();
        let json = serde_json::to_string(&pi).unwrap();
        assert_eq!(serde_json::from_str::<ShareVector>(&json).unwrap(), pi);
    }

    fn stochastic_rows(k: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, k), k).prop_map(move |rows| {
            rows.into_iter()
                .flat_map(|r| {
                    let s: f64 = r.iter().sum::<f64>() + 1e-12;
                    r.into_iter().map(move |v| (v + 1e-12 / k as f64) / s)
                })
                .collect()
        })
    }

    fn chain_from(entries: Vec<Vec<f64>>, k: usize) -> MatrixChain {
        let space = StateSpace::new(&(0..k).map(|i| format!("S{i}")).collect::<Vec<_>>()).unwrap();
        MatrixChain::new(
            entries
                .into_iter()
                .enumerate()
                .map(|(n, e)| TransitionMatrix::new(space.clone(), q("2018Q1").offset(n as i64), e).unwrap())
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn product_is_associative(mats in proptest::collection::vec(stochastic_rows(4), 2..6), split in 1usize..5) {
            let chain = chain_from(mats, 4);
            let split = split.min(chain.len() - 1);
            let whole = chain_product(&chain).unwrap();
            let left = chain_product(&chain.prefix(split)).unwrap();
            let right = chain_product(&MatrixChain::new(chain.matrices()[split..].to_vec()).unwrap()).unwrap();
            let joined = mat_mul(left.entries(), right.entries(), 4);
            for (a, b) in whole.entries().iter().zip(&joined) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn propagate_through_product_equals_fold(mats in proptest::collection::vec(stochastic_rows(3), 1..6), raw in proptest::collection::vec(0.01f64..1.0, 3)) {
            let chain = chain_from(mats, 3);
            let s: f64 = raw.iter().sum();
            let space = chain.matrices()[0].space().clone();
            let pi = ShareVector::new(space, q("2017Q4"), raw.iter().map(|v| v / s).collect()).unwrap();
            let folded = propagate_chain(&pi, &chain).unwrap().pop().unwrap();
            let prod = chain_product(&chain).unwrap();
            let direct: Vec<f64> = (0..3).map(|j| (0..3).map(|i| pi.get(i) * prod.get(i, j)).sum()).collect();
            for (a, b) in folded.values().iter().zip(&direct) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!((folded.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn difference_rows_sum_to_zero(a in stochastic_rows(5), b in stochastic_rows(5)) {
            let chain_a = chain_from(vec![a], 5);
            let chain_b = chain_from(vec![b], 5);
            let d = matrix_difference(&chain_a.matrices()[0], &chain_b.matrices()[0]).unwrap();
            for row in &d.entries {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-8);
            }
        }
    }
}
