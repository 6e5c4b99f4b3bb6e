//! Synthetic rotating-panel worlds with known truth.
//!
//! Every simulated person follows the true Markov chain from the first
//! quarter to the last; the survey only sees them in the quarters of their
//! rotation group (by default two in, two out, two back in). Age and the
//! other stratifiers are fixed per person and the population is closed.
//!
//! An intervention adds logit shifts to chosen cells for every transition
//! dated after `t_star`. Each shifted cell becomes
//! `logistic(logit(m) + shift)`; the untargeted cells of its row are
//! rescaled proportionally so the row still sums to one.
//!
//! Person `i` draws from ChaCha8 stream `i` of the seed, always in the
//! same order and with exactly one uniform per quarter, so records dated
//! up to `t_star` are identical to those of the same world without the
//! intervention.
//!
//! Configuration is TOML:
//!
//! ```toml
//! seed = 7
//! persons = 100000
//! start = "2016Q1"
//! end = "2019Q3"
//! # states = ["SE", "TE", "PE", "U", "IN"]   (default)
//! # initial_shares = [...]                    (default: stationary)
//!
//! [baseline]
//! matrix = [[...], ...]          # constant chain, rows = origin
//! # drift = [[...], ...]         # optional logit change per quarter
//! # [baseline.matrices]          # or one matrix per destination quarter
//! # "2016Q2" = [[...], ...]
//!
//! [intervention]
//! t_star = "2018Q3"
//! shifts = [{ from = "TE", to = "PE", logit = 0.5 }]
//!
//! [rotation]                     # defaults shown
//! waves_in = 2
//! waves_out = 2
//! waves_back = 2
//!
//! [weights]
//! model = "lognormal"            # or "constant" (default)
//! sigma = 0.3
//!
//! [stratifiers]                  # independent marginals, defaults shown
//! female = 0.5
//! young = 0.4
//! low_education = 0.5
//! south = 0.35
//!
//! [[heterogeneity]]              # optional subgroup-specific chains
//! filter = "sex=F"
//! shifts = [{ from = "TE", to = "PE", logit = -0.3 }]
//! ```

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::stationary_distribution;
use crate::error::SynthError;
use crate::flow::{
    chain_product, logistic, logit, matrix_difference, propagate, MatrixChain, ShareVector, StateSpace,
    TransitionMatrix,
};
use crate::panel::{Education, Panel, PersonQuarterRecord, Region, Sex, SubgroupFilter, YOUNG_CUTOFF};
use crate::quarter::QuarterId;

fn canonical_labels() -> Vec<String> {
    StateSpace::canonical().labels().to_vec()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub matrices: BTreeMap<QuarterId, Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellShift {
    pub from: String,
    pub to: String,
    pub logit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intervention {
    pub t_star: QuarterId,
    pub shifts: Vec<CellShift>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rotation {
    pub waves_in: usize,
    pub waves_out: usize,
    pub waves_back: usize,
}

impl Default for Rotation {
    fn default() -> Self {
        Self {
            waves_in: 2,
            waves_out: 2,
            waves_back: 2,
        }
    }
}

impl Rotation {
    fn cycle(&self) -> usize {
        self.waves_in + self.waves_out + self.waves_back
    }

    /// Offsets from entry at which a person is interviewed.
    pub fn offsets(&self) -> Vec<usize> {
        (0..self.waves_in)
            .chain(self.waves_in + self.waves_out..self.cycle())
            .collect()
    }

    /// Steady-state fraction of interviews preceded by an interview in the
    /// previous quarter.
    pub fn link_fraction(&self) -> f64 {
        let linked = self.waves_in.saturating_sub(1) + self.waves_back.saturating_sub(1);
        let linked = if self.waves_out == 0 { linked + 1 } else { linked };
        linked as f64 / (self.waves_in + self.waves_back) as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightModel {
    #[default]
    Constant,
    /// Mean-one lognormal weights, fixed per person.
    Lognormal { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Marginals {
    pub female: f64,
    /// Probability of being younger than the young cutoff.
    pub young: f64,
    pub low_education: f64,
    pub south: f64,
}

impl Default for Marginals {
    fn default() -> Self {
        Self {
            female: 0.5,
            young: 0.4,
            low_education: 0.5,
            south: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heterogeneity {
    pub filter: String,
    pub shifts: Vec<CellShift>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    #[serde(default = "canonical_labels")]
    pub states: Vec<String>,
    pub start: QuarterId,
    pub end: QuarterId,
    pub persons: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_shares: Option<Vec<f64>>,
    pub baseline: Baseline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<Intervention>,
    #[serde(default)]
    pub rotation: Rotation,
    #[serde(default)]
    pub weights: WeightModel,
    #[serde(default)]
    pub stratifiers: Marginals,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heterogeneity: Vec<Heterogeneity>,
}

impl WorldConfig {
    /// A world with one constant chain and default everything else.
    pub fn constant(
        space: &StateSpace,
        matrix: Vec<Vec<f64>>,
        start: QuarterId,
        end: QuarterId,
        persons: usize,
        seed: u64,
    ) -> Self {
        Self {
            states: space.labels().to_vec(),
            start,
            end,
            persons,
            seed,
            initial_shares: None,
            baseline: Baseline {
                matrix: Some(matrix),
                ..Baseline::default()
            },
            intervention: None,
            rotation: Rotation::default(),
            weights: WeightModel::default(),
            stratifiers: Marginals::default(),
            heterogeneity: vec![],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::ConfigInvalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn space(&self) -> Result<StateSpace, SynthError> {
        Ok(StateSpace::new(&self.states)?)
    }

    /// The same world with the intervention removed.
    pub fn without_intervention(&self) -> Self {
        Self {
            intervention: None,
            ..self.clone()
        }
    }

    fn invalid(msg: impl Into<String>) -> SynthError {
        SynthError::ConfigInvalid(msg.into())
    }

    fn resolve_shifts(space: &StateSpace, shifts: &[CellShift]) -> Result<Vec<CellLogitShift>, SynthError> {
        shifts
            .iter()
            .map(|s| {
                let i = space
                    .index_of(&s.from)
                    .ok_or_else(|| Self::invalid(format!("unknown state {:?}", s.from)))?;
                let j = space
                    .index_of(&s.to)
                    .ok_or_else(|| Self::invalid(format!("unknown state {:?}", s.to)))?;
                if !s.logit.is_finite() {
                    return Err(Self::invalid("logit shifts must be finite"));
                }
                Ok((i, j, s.logit))
            })
            .collect()
    }

    /// Baseline matrices dated `start+1..=end`.
    fn baseline_matrices(&self, space: &StateSpace) -> Result<Vec<TransitionMatrix>, SynthError> {
        let b = &self.baseline;
        let quarters = QuarterId::range_inclusive(self.start.succ(), self.end);
        match (&b.matrix, b.matrices.is_empty()) {
            (Some(m), true) => {
                let base = TransitionMatrix::from_rows(space.clone(), self.start.succ(), m)?;
                quarters
                    .iter()
                    .enumerate()
                    .map(|(h, q)| match &b.drift {
                        None => Ok(base.clone().with_period(*q)),
                        Some(drift) => {
                            let k = space.len();
                            if drift.len() != k || drift.iter().any(|r| r.len() != k) {
                                return Err(Self::invalid("drift must be K x K"));
                            }
                            let shifts: Vec<Vec<(usize, f64)>> = (0..k)
                                .map(|i| (0..k).map(|j| (j, drift[i][j] * h as f64)).collect())
                                .collect();
                            shifted_matrix(&base, &shifts, *q)
                        }
                    })
                    .collect()
            }
            (None, false) => quarters
                .iter()
                .map(|q| {
                    let rows = b
                        .matrices
                        .get(q)
                        .ok_or_else(|| Self::invalid(format!("no baseline matrix for {q}")))?;
                    Ok(TransitionMatrix::from_rows(space.clone(), *q, rows)?)
                })
                .collect(),
            _ => Err(Self::invalid("give exactly one of baseline.matrix and baseline.matrices")),
        }
    }

    fn validate(&self) -> Result<StateSpace, SynthError> {
        let space = self.space()?;
        if self.persons == 0 {
            return Err(Self::invalid("persons must be positive"));
        }
        if self.end <= self.start {
            return Err(Self::invalid("end must come after start"));
        }
        if self.rotation.waves_in == 0 {
            return Err(Self::invalid("waves_in must be positive"));
        }
        let m = &self.stratifiers;
        for (name, p) in [
            ("female", m.female),
            ("young", m.young),
            ("low_education", m.low_education),
            ("south", m.south),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Self::invalid(format!("stratifier marginal {name} = {p} outside [0, 1]")));
            }
        }
        if let WeightModel::Lognormal { sigma } = self.weights {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Self::invalid("lognormal sigma must be non-negative"));
            }
        }
        if let Some(iv) = &self.intervention {
            if iv.t_star < self.start || iv.t_star >= self.end {
                return Err(Self::invalid(format!(
                    "t_star {} outside {}..{}",
                    iv.t_star, self.start, self.end
                )));
            }
        }
        Ok(space)
    }

    /// Truth for every group without simulating anyone.
    pub fn truth(&self) -> Result<WorldTruth, SynthError> {
        let space = self.validate()?;
        let baseline = self.baseline_matrices(&space)?;
        let initial = match &self.initial_shares {
            Some(v) => ShareVector::new(space.clone(), self.start, v.clone())?,
            None => stationary_distribution(&baseline[0])
                .map_err(|e| Self::invalid(format!("no default initial shares: {e}")))?
                .with_period(self.start),
        };
        let intervention = match &self.intervention {
            Some(iv) => Some((iv.t_star, Self::resolve_shifts(&space, &iv.shifts)?)),
            None => None,
        };
        let mut groups = Vec::new();
        let mut group_specs: Vec<(String, Vec<CellLogitShift>)> = vec![("all".into(), vec![])];
        for h in &self.heterogeneity {
            let filter: SubgroupFilter = h.filter.parse().map_err(|_| Self::invalid(format!("bad filter {:?}", h.filter)))?;
            group_specs.push((filter.name, Self::resolve_shifts(&space, &h.shifts)?));
        }
        for (name, group_shift) in group_specs {
            let base: Vec<TransitionMatrix> = baseline
                .iter()
                .map(|m| shifted_matrix(m, &by_row(space.len(), &group_shift), m.period()))
                .collect::<Result<_, _>>()?;
            let realized: Vec<TransitionMatrix> = base
                .iter()
                .map(|m| match &intervention {
                    Some((t_star, shifts)) if m.period() > *t_star => {
                        shifted_matrix(m, &by_row(space.len(), shifts), m.period())
                    }
                    _ => Ok(m.clone()),
                })
                .collect::<Result<_, _>>()?;
            groups.push(GroupTruth::new(name, &initial, base, realized)?);
        }
        let main = groups.remove(0);
        Ok(WorldTruth {
            space,
            start: self.start,
            end: self.end,
            t_star: self.intervention.as_ref().map(|iv| iv.t_star),
            initial_shares: initial,
            baseline: main.baseline,
            realized: main.realized,
            baseline_shares: main.baseline_shares,
            realized_shares: main.realized_shares,
            groups,
        })
    }
}

/// `(from, to, logit shift)` with states resolved to indices.
type CellLogitShift = (usize, usize, f64);

fn by_row(k: usize, shifts: &[CellLogitShift]) -> Vec<Vec<(usize, f64)>> {
    let mut rows = vec![Vec::new(); k];
    for &(i, j, s) in shifts {
        rows[i].push((j, s));
    }
    rows
}

/// Applies per-row logit shifts `(column, shift)`; untargeted cells absorb
/// the change proportionally. Cells at 0 or 1 cannot move on the logit
/// scale and stay put.
pub fn shift_row(row: &[f64], shifts: &[(usize, f64)]) -> Result<Vec<f64>, SynthError> {
    if shifts.is_empty() {
        return Ok(row.to_vec());
    }
    let mut out = row.to_vec();
    let mut targeted = vec![false; row.len()];
    for &(j, s) in shifts {
        if row[j] > 0.0 && row[j] < 1.0 {
            out[j] = logistic(logit(row[j]) + s);
        }
        targeted[j] = true;
    }
    let shifted_mass: f64 = (0..row.len()).filter(|&j| targeted[j]).map(|j| out[j]).sum();
    let rest: f64 = (0..row.len()).filter(|&j| !targeted[j]).map(|j| row[j]).sum();
    if rest <= 0.0 {
        // Only targeted cells carry mass: renormalise them together.
        return Ok(out.iter().map(|v| v / shifted_mass).collect());
    }
    if shifted_mass >= 1.0 {
        return Err(SynthError::ConfigInvalid("shifted cells exceed the row total".into()));
    }
    let scale = (1.0 - shifted_mass) / rest;
    for j in 0..row.len() {
        if !targeted[j] {
            out[j] = row[j] * scale;
        }
    }
    Ok(out)
}

fn shifted_matrix(
    m: &TransitionMatrix,
    shifts: &[Vec<(usize, f64)>],
    period: QuarterId,
) -> Result<TransitionMatrix, SynthError> {
    let rows: Vec<Vec<f64>> = (0..m.dim())
        .map(|i| shift_row(m.row(i), &shifts[i]))
        .collect::<Result<_, _>>()?;
    Ok(TransitionMatrix::from_rows(m.space().clone(), period, &rows)?)
}

fn share_path(initial: &ShareVector, chain: &[TransitionMatrix]) -> Result<BTreeMap<QuarterId, ShareVector>, SynthError> {
    let mut out = BTreeMap::from([(initial.period(), initial.clone())]);
    let mut pi = initial.clone();
    for m in chain {
        pi = propagate(&pi, m)?;
        out.insert(pi.period(), pi.clone());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub name: String,
    pub baseline: BTreeMap<QuarterId, TransitionMatrix>,
    pub realized: BTreeMap<QuarterId, TransitionMatrix>,
    pub baseline_shares: BTreeMap<QuarterId, ShareVector>,
    pub realized_shares: BTreeMap<QuarterId, ShareVector>,
}

impl GroupTruth {
    fn new(
        name: String,
        initial: &ShareVector,
        baseline: Vec<TransitionMatrix>,
        realized: Vec<TransitionMatrix>,
    ) -> Result<Self, SynthError> {
        Ok(Self {
            name,
            baseline_shares: share_path(initial, &baseline)?,
            realized_shares: share_path(initial, &realized)?,
            baseline: baseline.into_iter().map(|m| (m.period(), m)).collect(),
            realized: realized.into_iter().map(|m| (m.period(), m)).collect(),
        })
    }
}

/// The chains that generated a world and the share paths they imply.
/// Matrices are dated by destination quarter, `start+1..=end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub space: StateSpace,
    pub start: QuarterId,
    pub end: QuarterId,
    pub t_star: Option<QuarterId>,
    pub initial_shares: ShareVector,
    pub baseline: BTreeMap<QuarterId, TransitionMatrix>,
    pub realized: BTreeMap<QuarterId, TransitionMatrix>,
    pub baseline_shares: BTreeMap<QuarterId, ShareVector>,
    pub realized_shares: BTreeMap<QuarterId, ShareVector>,
    /// Subgroups with their own chains; the main fields cover everyone
    /// else.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupTruth>,
}

impl WorldTruth {
    /// Truth from explicit chains, dated `start+1..`.
    pub fn from_chains(
        initial: ShareVector,
        baseline: Vec<TransitionMatrix>,
        realized: Vec<TransitionMatrix>,
        t_star: Option<QuarterId>,
    ) -> Result<Self, SynthError> {
        MatrixChain::new(baseline.clone())?;
        MatrixChain::new(realized.clone())?;
        let start = initial.period();
        let end = baseline.last().map_or(start, |m| m.period());
        let g = GroupTruth::new("all".into(), &initial, baseline, realized)?;
        Ok(Self {
            space: initial.space().clone(),
            start,
            end,
            t_star,
            initial_shares: initial,
            baseline: g.baseline,
            realized: g.realized,
            baseline_shares: g.baseline_shares,
            realized_shares: g.realized_shares,
            groups: vec![],
        })
    }
}

/// Exact effects of the realized chain against the baseline chain over
/// `t_star+1..=t_star+horizon`, both paths anchored at the realized shares
/// of `t_star`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    pub t_star: QuarterId,
    pub horizon: usize,
    pub realized_path: Vec<ShareVector>,
    pub counterfactual_path: Vec<ShareVector>,
    /// Horizon-averaged realized minus counterfactual shares.
    pub share_diffs: Vec<f64>,
    pub cumulative_realized: TransitionMatrix,
    pub cumulative_baseline: TransitionMatrix,
    pub cumulative_effects: Vec<Vec<f64>>,
}

pub fn true_effects(truth: &WorldTruth, t_star: QuarterId, horizon: usize) -> Result<TrueEffects, SynthError> {
    let last = t_star.offset(horizon as i64);
    if horizon == 0 || t_star < truth.start || last > truth.end {
        return Err(SynthError::HorizonOutOfRange {
            t_star,
            horizon,
            last: truth.end,
        });
    }
    let pick = |map: &BTreeMap<QuarterId, TransitionMatrix>| -> Vec<TransitionMatrix> {
        map.range(t_star.succ()..=last).map(|(_, m)| m.clone()).collect()
    };
    let realized = MatrixChain::new(pick(&truth.realized))?;
    let baseline = MatrixChain::new(pick(&truth.baseline))?;
    let anchor = truth.realized_shares[&t_star].clone();
    let walk = |chain: &MatrixChain| -> Result<Vec<ShareVector>, SynthError> {
        let mut pi = anchor.clone();
        chain
            .matrices()
            .iter()
            .map(|m| {
                pi = propagate(&pi, m)?;
                Ok(pi.clone())
            })
            .collect()
    };
    let realized_path = walk(&realized)?;
    let counterfactual_path = walk(&baseline)?;
    let k = truth.space.len();
    let share_diffs = (0..k)
        .map(|j| {
            realized_path
                .iter()
                .zip(&counterfactual_path)
                .map(|(a, b)| a.get(j) - b.get(j))
                .sum::<f64>()
                / horizon as f64
        })
        .collect();
    let cumulative_realized = chain_product(&realized)?;
    let cumulative_baseline = chain_product(&baseline)?;
    let cumulative_effects = matrix_difference(&cumulative_realized, &cumulative_baseline)?.entries;
    Ok(TrueEffects {
        t_star,
        horizon,
        realized_path,
        counterfactual_path,
        share_diffs,
        cumulative_realized,
        cumulative_baseline,
        cumulative_effects,
    })
}

/// Per-group inverse CDFs, indexed `[quarter][from][to]` flattened.
struct Sampler {
    k: usize,
    cdf: Vec<f64>,
}

impl Sampler {
    fn new(chain: &BTreeMap<QuarterId, TransitionMatrix>) -> Self {
        let k = chain.values().next().map_or(0, TransitionMatrix::dim);
        let mut cdf = Vec::with_capacity(chain.len() * k * k);
        for m in chain.values() {
            for i in 0..k {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += m.get(i, j);
                    cdf.push(acc);
                }
            }
        }
        Self { k, cdf }
    }

    fn draw_from(cdf: &[f64], u: f64) -> usize {
        let total = *cdf.last().expect("non-empty row");
        let target = u * total;
        cdf.iter()
            .position(|c| target < *c)
            .unwrap_or_else(|| cdf.iter().rposition(|c| *c > 0.0).unwrap_or(0))
    }

    fn step(&self, h: usize, from: usize, u: f64) -> usize {
        let base = (h * self.k + from) * self.k;
        let row = &self.cdf[base..base + self.k];
        // Skip over leading zero-probability cells for a stable draw.
        Self::draw_from(row, u)
    }
}

fn initial_cdf(shares: &ShareVector) -> Vec<f64> {
    let mut acc = 0.0;
    shares
        .values()
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Bookkeeping from one generation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub persons: usize,
    pub records: usize,
    /// Configured steady-state fraction of interviews linked to the
    /// previous quarter.
    pub configured_link_fraction: f64,
}

pub struct World {
    pub panel: Panel,
    pub truth: WorldTruth,
    pub stats: GenerationStats,
}

/// Simulates the world and returns the observed panel with its truth.
pub fn generate(cfg: &WorldConfig) -> Result<World, SynthError> {
    let truth = cfg.truth()?;
    let space = truth.space.clone();
    let quarters = QuarterId::range_inclusive(cfg.start, cfg.end);
    let span = quarters.len();
    let filters: Vec<SubgroupFilter> = cfg
        .heterogeneity
        .iter()
        .map(|h| h.filter.parse().expect("validated by truth()"))
        .collect();
    let mut samplers = vec![Sampler::new(&truth.realized)];
    samplers.extend(truth.groups.iter().map(|g| Sampler::new(&g.realized)));
    let start_cdf = initial_cdf(&truth.initial_shares);
    let offsets = cfg.rotation.offsets();
    let lead = cfg.rotation.cycle() - 1;
    let marg = cfg.stratifiers;

    let per_person: Vec<Vec<PersonQuarterRecord>> = (0..cfg.persons)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let sex = if rng.random::<f64>() < marg.female { Sex::F } else { Sex::M };
            let young = rng.random::<f64>() < marg.young;
            let age = if young {
                rng.random_range(15..YOUNG_CUTOFF)
            } else {
                rng.random_range(YOUNG_CUTOFF..=64)
            };
            let education = if rng.random::<f64>() < marg.low_education {
                Education::Low
            } else {
                Education::High
            };
            let region = if rng.random::<f64>() < marg.south {
                Region::South
            } else {
                Region::NorthCenter
            };
            // Entry such that at least the last wave can fall inside the span.
            let entry = rng.random_range(0..span + lead) as i64 - lead as i64;
            let weight = match cfg.weights {
                WeightModel::Constant => 1.0,
                WeightModel::Lognormal { sigma } => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (sigma * z - 0.5 * sigma * sigma).exp()
                }
            };
            let mut record = PersonQuarterRecord {
                person_id: format!("p{i:08}"),
                period: cfg.start,
                state: 0,
                weight,
                sex,
                age: Some(age),
                education,
                region,
            };
            let group = filters
                .iter()
                .position(|f| f.matches(&record))
                .map_or(0, |g| g + 1);
            let sampler = &samplers[group];
            let mut state = Sampler::draw_from(&start_cdf, rng.random());
            let observed = |t: usize| offsets.iter().any(|o| entry + *o as i64 == t as i64);
            let mut out = Vec::with_capacity(offsets.len());
            for (t, q) in quarters.iter().enumerate() {
                if t > 0 {
                    state = sampler.step(t - 1, state, rng.random());
                }
                if observed(t) {
                    record.period = *q;
                    record.state = state;
                    out.push(record.clone());
                }
            }
            out
        })
        .collect();
    let mut records: Vec<PersonQuarterRecord> = per_person.into_iter().flatten().collect();
    records.sort_by(|a, b| a.period.cmp(&b.period).then_with(|| a.person_id.cmp(&b.person_id)));
    let stats = GenerationStats {
        persons: cfg.persons,
        records: records.len(),
        configured_link_fraction: cfg.rotation.link_fraction(),
    };
    Ok(World {
        panel: Panel::new(space, records),
        truth,
        stats,
    })
}

/// Filter matching one heterogeneity block; used by callers that want to
/// estimate a subgroup against its own truth.
pub fn group_filter(cfg: &WorldConfig, name: &str) -> Option<SubgroupFilter> {
    cfg.heterogeneity
        .iter()
        .filter_map(|h| h.filter.parse::<SubgroupFilter>().ok())
        .find(|f| f.name == name)
}
