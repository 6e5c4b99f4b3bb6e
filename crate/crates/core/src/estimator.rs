//! Weighted maximum-likelihood estimation of quarterly transition matrices
//! and population shares.
//!
//! `m(i,j)_t = M(i,j)_t / M(i)_{t-1}`: the weighted count of `i -> j` moves
//! dated `t` over the weighted count of linked persons in `i` at `t-1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{EstimateError, IngestError};
use crate::flow::{ShareVector, StateSpace, TransitionMatrix};
use crate::panel::{
    apply_filter, link_transitions, Panel, PersonQuarterRecord, SubgroupFilter, TransitionRecord, WeightSource,
};
use crate::quarter::{QuarterId, QuarterWindow};

/// A linked move between two consecutive quarters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Move {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// A person observed in some state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub state: usize,
    pub weight: f64,
}

/// Everything estimation needs from one survey quarter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuarterSample {
    pub observations: Vec<Observation>,
    /// Moves dated at this quarter (origin in the previous quarter).
    pub moves: Vec<Move>,
}

/// Per-quarter samples stripped of identifiers; the unit that the
/// bootstrap resamples.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationPanel {
    pub space: StateSpace,
    pub quarters: BTreeMap<QuarterId, QuarterSample>,
}

impl EstimationPanel {
    /// Filters person-quarters, links consecutive quarters and groups by
    /// quarter. Every quarter in the unfiltered panel's span gets an entry,
    /// possibly empty.
    pub fn from_panel(
        panel: &Panel,
        filter: &SubgroupFilter,
        weight_source: WeightSource,
    ) -> Result<Self, IngestError> {
        let mut quarters: BTreeMap<QuarterId, QuarterSample> = BTreeMap::new();
        if let Some((first, last)) = panel.span() {
            for q in QuarterId::range_inclusive(first, last) {
                quarters.insert(q, QuarterSample::default());
            }
        }
        let kept: Vec<PersonQuarterRecord>;
        let records = if filter.is_all() {
            &panel.records
        } else {
            kept = apply_filter(&panel.records, filter);
            &kept
        };
        let transitions = link_transitions(records, weight_source)?;
        // Sort observations for a layout independent of input row order.
        let mut obs: Vec<&PersonQuarterRecord> = records.iter().collect();
        obs.sort_by(|a, b| a.period.cmp(&b.period).then_with(|| a.person_id.cmp(&b.person_id)));
        for r in obs {
            quarters.entry(r.period).or_default().observations.push(Observation {
                state: r.state,
                weight: r.weight,
            });
        }
        for t in &transitions {
            quarters.entry(t.period).or_default().moves.push(Move {
                from: t.from,
                to: t.to,
                weight: t.weight,
            });
        }
        Ok(Self {
            space: panel.space.clone(),
            quarters,
        })
    }

    pub fn span(&self) -> Option<(QuarterId, QuarterId)> {
        Some((*self.quarters.keys().next()?, *self.quarters.keys().next_back()?))
    }

    pub fn sample(&self, q: QuarterId) -> Option<&QuarterSample> {
        self.quarters.get(&q)
    }

    /// Copy restricted to the quarters of `window`.
    pub fn restrict(&self, window: QuarterWindow) -> Self {
        Self {
            space: self.space.clone(),
            quarters: self
                .quarters
                .range(window.start..=window.end)
                .map(|(q, s)| (*q, s.clone()))
                .collect(),
        }
    }
}

/// Weighted transition counts behind one estimated matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowCounts {
    pub space: StateSpace,
    pub period: QuarterId,
    /// Row-major `K x K` summed weights.
    pub counts: Vec<f64>,
    pub row_totals: Vec<f64>,
    /// Kish effective sample size `(sum w)^2 / sum w^2` per cell.
    pub cell_ess: Vec<f64>,
    /// Effective sample size per origin row.
    pub row_ess: Vec<f64>,
    pub n_moves: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixEstimate {
    pub matrix: TransitionMatrix,
    pub counts: FlowCounts,
    /// Origin states with no observed leavers, filled with an identity row.
    pub zero_rows: Vec<usize>,
}

fn ess(sum: f64, sum_sq: f64) -> f64 {
    if sum_sq > 0.0 {
        sum * sum / sum_sq
    } else {
        0.0
    }
}

/// Estimates `M_t` from the moves dated `period`.
pub fn estimate_matrix_from_moves(
    moves: &[Move],
    space: &StateSpace,
    period: QuarterId,
) -> Result<MatrixEstimate, EstimateError> {
    if moves.is_empty() {
        return Err(EstimateError::EmptyQuarter(period));
    }
    let k = space.len();
    let mut counts = vec![0.0; k * k];
    let mut sq = vec![0.0; k * k];
    for m in moves {
        counts[m.from * k + m.to] += m.weight;
        sq[m.from * k + m.to] += m.weight * m.weight;
    }
    let row_totals: Vec<f64> = counts.chunks(k).map(|r| r.iter().sum()).collect();
    let row_sq: Vec<f64> = sq.chunks(k).map(|r| r.iter().sum()).collect();
    let cell_ess = counts.iter().zip(&sq).map(|(s, q)| ess(*s, *q)).collect();
    let row_ess = row_totals.iter().zip(&row_sq).map(|(s, q)| ess(*s, *q)).collect();

    let mut entries = vec![0.0; k * k];
    let mut zero_rows = Vec::new();
    for i in 0..k {
        let total = row_totals[i];
        if total > 0.0 {
            for j in 0..k {
                entries[i * k + j] = counts[i * k + j] / total;
            }
        } else {
            warn!("{period}: no transitions out of {}, using identity row", space.label(i));
            entries[i * k + i] = 1.0;
            zero_rows.push(i);
        }
    }
    let matrix = TransitionMatrix::new(space.clone(), period, entries)?;
    Ok(MatrixEstimate {
        matrix,
        counts: FlowCounts {
            space: space.clone(),
            period,
            counts,
            row_totals,
            cell_ess,
            row_ess,
            n_moves: moves.len(),
        },
        zero_rows,
    })
}

/// Estimates `M_t` from linked transition records dated `period`.
pub fn estimate_matrix(
    transitions: &[TransitionRecord],
    space: &StateSpace,
    period: QuarterId,
) -> Result<MatrixEstimate, EstimateError> {
    let moves: Vec<Move> = transitions
        .iter()
        .filter(|t| t.period == period)
        .map(|t| Move {
            from: t.from,
            to: t.to,
            weight: t.weight,
        })
        .collect();
    estimate_matrix_from_moves(&moves, space, period)
}

pub fn estimate_shares_from_observations(
    observations: &[Observation],
    space: &StateSpace,
    period: QuarterId,
) -> Result<ShareVector, EstimateError> {
    if observations.is_empty() {
        return Err(EstimateError::EmptyQuarter(period));
    }
    let mut mass = vec![0.0; space.len()];
    for o in observations {
        mass[o.state] += o.weight;
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(ShareVector::new(space.clone(), period, mass)?)
}

/// Weighted state shares among the records dated `period`.
pub fn estimate_shares(
    records: &[PersonQuarterRecord],
    space: &StateSpace,
    period: QuarterId,
) -> Result<ShareVector, EstimateError> {
    let obs: Vec<Observation> = records
        .iter()
        .filter(|r| r.period == period)
        .map(|r| Observation {
            state: r.state,
            weight: r.weight,
        })
        .collect();
    estimate_shares_from_observations(&obs, space, period)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuarterMeta {
    pub n_observations: usize,
    pub n_moves: usize,
    pub observation_ess: f64,
    pub row_ess: Vec<f64>,
    pub zero_rows: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub quarters: BTreeMap<QuarterId, QuarterMeta>,
    pub warnings: Vec<String>,
}

/// Estimated shares for every quarter of a window and matrices for every
/// consecutive pair inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct QuarterSeries {
    pub space: StateSpace,
    pub window: QuarterWindow,
    pub matrices: BTreeMap<QuarterId, TransitionMatrix>,
    pub shares: BTreeMap<QuarterId, ShareVector>,
    pub counts: BTreeMap<QuarterId, FlowCounts>,
    pub meta: SeriesMeta,
}

impl QuarterSeries {
    pub fn matrix(&self, q: QuarterId) -> Option<&TransitionMatrix> {
        self.matrices.get(&q)
    }

    pub fn shares_at(&self, q: QuarterId) -> Option<&ShareVector> {
        self.shares.get(&q)
    }

    /// Values of cell `(i, j)` for matrices dated in `[from, to]`.
    pub fn cell_path(&self, i: usize, j: usize, from: QuarterId, to: QuarterId) -> Vec<f64> {
        self.matrices.range(from..=to).map(|(_, m)| m.get(i, j)).collect()
    }

    /// Writes `shares.csv`, one `matrix_<period>.csv` per quarter and
    /// `meta.json` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut shares = String::from("period");
        for l in self.space.labels() {
            let _ = write!(shares, ",{l}");
        }
        shares.push('\n');
        for (q, s) in &self.shares {
            let _ = write!(shares, "{q}");
            for v in s.values() {
                let _ = write!(shares, ",{v}");
            }
            shares.push('\n');
        }
        fs::write(dir.join("shares.csv"), shares)?;
        for (q, m) in &self.matrices {
            fs::write(dir.join(format!("matrix_{q}.csv")), m.to_csv())?;
        }
        let meta = serde_json::to_string_pretty(&self.meta).map_err(std::io::Error::other)?;
        fs::write(dir.join("meta.json"), meta)
    }
}

/// Builds the share and matrix series over `window`.
pub fn build_series(panel: &EstimationPanel, window: QuarterWindow) -> Result<QuarterSeries, EstimateError> {
    let covered = panel
        .span()
        .is_some_and(|(first, last)| first <= window.start && window.end <= last);
    if !covered {
        let span = panel
            .span()
            .map(|(a, b)| format!("{a}:{b}"))
            .unwrap_or_else(|| "nothing".into());
        return Err(EstimateError::WindowNotCovered {
            window: window.to_string(),
            span,
        });
    }
    let space = &panel.space;
    let mut series = QuarterSeries {
        space: space.clone(),
        window,
        matrices: BTreeMap::new(),
        shares: BTreeMap::new(),
        counts: BTreeMap::new(),
        meta: SeriesMeta::default(),
    };
    let empty = QuarterSample::default();
    for q in window.quarters() {
        let sample = panel.sample(q).unwrap_or(&empty);
        let shares = estimate_shares_from_observations(&sample.observations, space, q)?;
        let (w, w2) = sample
            .observations
            .iter()
            .fold((0.0, 0.0), |(a, b), o| (a + o.weight, b + o.weight * o.weight));
        let mut meta = QuarterMeta {
            n_observations: sample.observations.len(),
            n_moves: sample.moves.len(),
            observation_ess: ess(w, w2),
            ..QuarterMeta::default()
        };
        series.shares.insert(q, shares);
        if q > window.start {
            let est = estimate_matrix_from_moves(&sample.moves, space, q)?;
            meta.row_ess = est.counts.row_ess.clone();
            for &i in &est.zero_rows {
                meta.zero_rows.push(space.label(i).to_string());
                series
                    .meta
                    .warnings
                    .push(format!("{q}: no transitions out of {}; identity row used", space.label(i)));
            }
            series.matrices.insert(q, est.matrix);
            series.counts.insert(q, est.counts);
        }
        series.meta.quarters.insert(q, meta);
    }
    Ok(series)
}

/// Filter, link and estimate in one step.
pub fn build_series_from_panel(
    panel: &Panel,
    window: QuarterWindow,
    filter: &SubgroupFilter,
    weight_source: WeightSource,
) -> Result<QuarterSeries, EstimateError> {
    let est = EstimationPanel::from_panel(panel, filter, weight_source)
        .map_err(|e| EstimateError::Linkage(e.to_string()))?;
    build_series(&est, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Education, Region, Sex};
    use approx::assert_abs_diff_eq;

    fn q(s: &str) -> QuarterId {
        s.parse().unwrap()
    }

    fn mv(from: usize, to: usize, weight: f64) -> Move {
        Move { from, to, weight }
    }

    #[test]
    fn te_row_by_hand() {
        let space = StateSpace::canonical();
        let mut moves = vec![mv(1, 1, 1.0), mv(1, 1, 1.0), mv(1, 1, 1.0), mv(1, 2, 1.0)];
        for s in [0, 2, 3, 4] {
            moves.push(mv(s, s, 1.0));
        }
        let est = estimate_matrix_from_moves(&moves, &space, q("2018Q2")).unwrap();
        assert_eq!(est.matrix.row(1), [0.0, 0.75, 0.25, 0.0, 0.0]);
        assert_eq!(est.counts.row_totals[1], 4.0);
        assert!(est.zero_rows.is_empty());
    }

    #[test]
    fn stayers_give_identity() {
        let space = StateSpace::canonical();
        let moves: Vec<_> = (0..5).map(|s| mv(s, s, 1.3)).collect();
        let est = estimate_matrix_from_moves(&moves, &space, q("2018Q2")).unwrap();
        assert_eq!(est.matrix, TransitionMatrix::identity(space, q("2018Q2")));
    }

    #[test]
    fn weighted_ratio() {
        let space = StateSpace::new(&["A", "B"]).unwrap();
        let moves = vec![mv(0, 1, 3.0), mv(0, 0, 1.0), mv(1, 1, 1.0)];
        let est = estimate_matrix_from_moves(&moves, &space, q("2018Q2")).unwrap();
        assert_eq!(est.matrix.get(0, 1), 0.75);
        assert_abs_diff_eq!(est.counts.row_ess[0], 16.0 / 10.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_row_falls_back_to_identity() {
        let space = StateSpace::new(&["A", "B"]).unwrap();
        let est = estimate_matrix_from_moves(&[mv(0, 1, 1.0)], &space, q("2018Q2")).unwrap();
        assert_eq!(est.zero_rows, vec![1]);
        assert_eq!(est.matrix.row(1), [0.0, 1.0]);
        assert!(matches!(
            estimate_matrix_from_moves(&[], &space, q("2018Q2")),
            Err(EstimateError::EmptyQuarter(_))
        ));
    }

    fn person(id: &str, period: &str, state: usize, weight: f64) -> PersonQuarterRecord {
        PersonQuarterRecord {
            person_id: id.into(),
            period: q(period),
            state,
            weight,
            sex: Sex::M,
            age: Some(40),
            education: Education::High,
            region: Region::NorthCenter,
        }
    }

    #[test]
    fn shares_by_hand() {
        let space = StateSpace::canonical();
        let s = estimate_shares(&[person("a", "2018Q1", 3, 2.0)], &space, q("2018Q1")).unwrap();
        assert_eq!(s.values(), [0.0, 0.0, 0.0, 1.0, 0.0]);
        let recs = [
            person("a", "2018Q1", 0, 1.0),
            person("b", "2018Q1", 1, 1.0),
            person("c", "2018Q1", 2, 2.0),
        ];
        let s = estimate_shares(&recs, &space, q("2018Q1")).unwrap();
        assert_eq!(s.values(), [0.25, 0.25, 0.5, 0.0, 0.0]);
        assert!(estimate_shares(&recs, &space, q("2018Q2")).is_err());
    }

    fn tiny_panel() -> Panel {
        Panel::new(
            StateSpace::canonical(),
            vec![
                person("a", "2018Q1", 1, 1.0),
                person("a", "2018Q2", 2, 1.0),
                person("b", "2018Q1", 3, 1.0),
                person("b", "2018Q2", 3, 1.0),
            ],
        )
    }

    #[test]
    fn two_quarter_window() {
        let w: QuarterWindow = "2018Q1:2018Q2".parse().unwrap();
        let s = build_series_from_panel(&tiny_panel(), w, &SubgroupFilter::all(), WeightSource::Destination)
            .unwrap();
        assert_eq!(s.shares.len(), 2);
        assert_eq!(s.matrices.len(), 1);
        assert_eq!(s.meta.quarters[&q("2018Q2")].zero_rows.len(), 3);
        assert_eq!(s.matrix(q("2018Q2")).unwrap().get(1, 2), 1.0);
    }

    #[test]
    fn window_and_filter_errors() {
        let w: QuarterWindow = "2017Q4:2018Q2".parse().unwrap();
        assert!(matches!(
            build_series_from_panel(&tiny_panel(), w, &SubgroupFilter::all(), WeightSource::Destination),
            Err(EstimateError::WindowNotCovered { .. })
        ));
        let w: QuarterWindow = "2018Q1:2018Q2".parse().unwrap();
        let nobody: SubgroupFilter = "sex=F".parse().unwrap();
        assert!(matches!(
            build_series_from_panel(&tiny_panel(), w, &nobody, WeightSource::Destination),
            Err(EstimateError::EmptyQuarter(_))
        ));
    }

    #[test]
    fn closed_population_propagation_is_exact() {
        // Every person observed in both quarters with constant weight.
        let mut recs = Vec::new();
        let states = [(0, 0), (1, 2), (1, 1), (3, 1), (4, 4), (2, 2), (3, 4)];
        for (n, (a, b)) in states.iter().enumerate() {
            let w = 1.0 + n as f64 * 0.5;
            recs.push(person(&format!("p{n}"), "2018Q1", *a, w));
            recs.push(person(&format!("p{n}"), "2018Q2", *b, w));
        }
        let panel = Panel::new(StateSpace::canonical(), recs);
        let w: QuarterWindow = "2018Q1:2018Q2".parse().unwrap();
        let s = build_series_from_panel(&panel, w, &SubgroupFilter::all(), WeightSource::Destination).unwrap();
        let prop = crate::flow::propagate(&s.shares[&q("2018Q1")], s.matrix(q("2018Q2")).unwrap()).unwrap();
        for (a, b) in prop.values().iter().zip(s.shares[&q("2018Q2")].values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn write_dir_layout() {
        let dir = tempfile::tempdir().unwrap();
        let w: QuarterWindow = "2018Q1:2018Q2".parse().unwrap();
        let s = build_series_from_panel(&tiny_panel(), w, &SubgroupFilter::all(), WeightSource::Destination)
            .unwrap();
        s.write_dir(dir.path()).unwrap();
        let shares = fs::read_to_string(dir.path().join("shares.csv")).unwrap();
        assert!(shares.starts_with("period,SE,TE,PE,U,IN\n2018Q1,"));
        assert!(dir.path().join("matrix_2018Q2.csv").exists());
        assert!(dir.path().join("meta.json").exists());
    }
}
