//! Two-state (pause/move) time-inhomogeneous Markov process: weekly binning of
//! observed state sequences, empirical transition estimates and forward
//! propagation of state distributions.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintReport, ViolationStats};
use crate::error::{Error, Result};

/// Seconds in one week.
pub const WEEK_SECONDS: i64 = 7 * 24 * 3600;
/// Hours in one week; GP inputs live in `[0, WEEK_HOURS)`.
pub const WEEK_HOURS: f64 = 168.0;
/// 1970-01-05 00:00 UTC, the first Monday after the Unix epoch. Week phase is
/// measured from this instant.
pub const MONDAY_ANCHOR: i64 = 4 * 24 * 3600;

/// Task order of the transition matrix `A`: columns `[a_pp, a_pm, a_mm, a_mp]`.
pub const TASK_NAMES: [&str; 4] = ["a_pp", "a_pm", "a_mm", "a_mp"];
pub const TASK_PP: usize = 0;
pub const TASK_PM: usize = 1;
pub const TASK_MM: usize = 2;
pub const TASK_MP: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MobilityState {
    Pause = 0,
    Move = 1,
}

impl MobilityState {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            MobilityState::Pause => 'P',
            MobilityState::Move => 'M',
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        match code.trim() {
            "P" | "p" => Ok(MobilityState::Pause),
            "M" | "m" => Ok(MobilityState::Move),
            other => Err(Error::InvalidSequence(format!("unknown state code {other:?}"))),
        }
    }
}

/// Timestamped states of one individual, strictly increasing in time.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSequence {
    person_id: String,
    entries: Vec<(i64, MobilityState)>,
}

impl StateSequence {
    pub fn new(person_id: impl Into<String>, entries: Vec<(i64, MobilityState)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("state sequence has no entries".into()));
        }
        if let Some(w) = entries.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidSequence(format!(
                "timestamps not strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(Self {
            person_id: person_id.into(),
            entries,
        })
    }

    pub fn person_id(&self) -> &str {
        &self.person_id
    }

    pub fn entries(&self) -> &[(i64, MobilityState)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same states with every timestamp moved by `seconds`.
    pub fn shifted(&self, seconds: i64) -> Self {
        Self {
            person_id: self.person_id.clone(),
            entries: self.entries.iter().map(|&(t, s)| (t + seconds, s)).collect(),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct StateRecord {
    person_id: String,
    timestamp: i64,
    state: String,
}

/// Writes sequences as `person_id,timestamp,state` CSV.
pub fn write_sequences_csv<W: Write>(writer: W, sequences: &[StateSequence]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for seq in sequences {
        for &(timestamp, state) in &seq.entries {
            wtr.serialize(StateRecord {
                person_id: seq.person_id.clone(),
                timestamp,
                state: state.code().to_string(),
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `person_id,timestamp,state` CSV; rows are grouped by person in order
/// of first appearance.
pub fn read_sequences_csv<R: Read>(reader: R) -> Result<Vec<StateSequence>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<(i64, MobilityState)>> =
        std::collections::HashMap::new();
    for rec in rdr.deserialize::<StateRecord>() {
        let rec = rec?;
        let state = MobilityState::from_code(&rec.state)?;
        if !groups.contains_key(&rec.person_id) {
            order.push(rec.person_id.clone());
        }
        groups
            .entry(rec.person_id)
            .or_default()
            .push((rec.timestamp, state));
    }
    if order.is_empty() {
        return Err(Error::EmptyInput("no state records".into()));
    }
    order
        .into_iter()
        .map(|id| {
            let entries = groups.remove(&id).unwrap_or_default();
            StateSequence::new(id, entries)
        })
        .collect()
}

pub fn read_sequences_file(path: &Path) -> Result<Vec<StateSequence>> {
    read_sequences_csv(std::fs::File::open(path)?)
}

/// Weekly binning: 168 hourly, 336 half-hourly or 672 quarter-hourly bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBinScheme {
    bins_per_hour: u32,
}

impl TimeBinScheme {
    pub fn new(bins_per_hour: u32) -> Result<Self> {
        match bins_per_hour {
            1 | 2 | 4 => Ok(Self { bins_per_hour }),
            other => Err(Error::InvalidConfig(format!(
                "bins per hour must be 1, 2 or 4 (got {other})"
            ))),
        }
    }

    pub fn hourly() -> Self {
        Self { bins_per_hour: 1 }
    }

    pub fn bins_per_hour(&self) -> u32 {
        self.bins_per_hour
    }

    pub fn total_bins(&self) -> usize {
        7 * 24 * self.bins_per_hour as usize
    }

    pub fn bin_width_seconds(&self) -> i64 {
        3600 / self.bins_per_hour as i64
    }

    pub fn bin_width_hours(&self) -> f64 {
        1.0 / self.bins_per_hour as f64
    }

    /// Bin containing `timestamp` (UTC seconds), cyclic over the week.
    pub fn bin_of(&self, timestamp: i64) -> usize {
        let phase = (timestamp - MONDAY_ANCHOR).rem_euclid(WEEK_SECONDS);
        (phase / self.bin_width_seconds()) as usize
    }

    pub fn bin_center_hours(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.bin_width_hours()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.total_bins()).map(|b| self.bin_center_hours(b)).collect()
    }
}

/// Week phase of `timestamp` in hours, in `[0, 168)`.
pub fn week_phase_hours(timestamp: i64) -> f64 {
    (timestamp - MONDAY_ANCHOR).rem_euclid(WEEK_SECONDS) as f64 / 3600.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    pub pp: u64,
    pub pm: u64,
    pub mp: u64,
    pub mm: u64,
}

impl BinCounts {
    pub fn pause_origin(&self) -> u64 {
        self.pp + self.pm
    }

    pub fn move_origin(&self) -> u64 {
        self.mp + self.mm
    }

    pub fn total(&self) -> u64 {
        self.pause_origin() + self.move_origin()
    }

    fn record(&mut self, from: MobilityState, to: MobilityState) {
        match (from, to) {
            (MobilityState::Pause, MobilityState::Pause) => self.pp += 1,
            (MobilityState::Pause, MobilityState::Move) => self.pm += 1,
            (MobilityState::Move, MobilityState::Pause) => self.mp += 1,
            (MobilityState::Move, MobilityState::Move) => self.mm += 1,
        }
    }
}

/// Per-bin transition counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionCounts {
    scheme: TimeBinScheme,
    bins: Vec<BinCounts>,
}

impl TransitionCounts {
    pub fn zeros(scheme: TimeBinScheme) -> Self {
        Self {
            scheme,
            bins: vec![BinCounts::default(); scheme.total_bins()],
        }
    }

    pub fn from_bins(scheme: TimeBinScheme, bins: Vec<BinCounts>) -> Result<Self> {
        if bins.len() != scheme.total_bins() {
            return Err(Error::DimensionError {
                expected: scheme.total_bins(),
                got: bins.len(),
            });
        }
        Ok(Self { scheme, bins })
    }

    pub fn scheme(&self) -> TimeBinScheme {
        self.scheme
    }

    pub fn bins(&self) -> &[BinCounts] {
        &self.bins
    }

    pub fn bin(&self, b: usize) -> &BinCounts {
        &self.bins[b]
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(BinCounts::total).sum()
    }

    /// Adds `other` bin by bin. Both must use the same scheme.
    pub fn merge(&mut self, other: &TransitionCounts) -> Result<()> {
        if self.scheme != other.scheme {
            return Err(Error::InvalidConfig("cannot merge counts of different schemes".into()));
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.pp += b.pp;
            a.pm += b.pm;
            a.mp += b.mp;
            a.mm += b.mm;
        }
        Ok(())
    }
}

/// Counts consecutive observation pairs per destination bin.
///
/// A pair `(t_{i-1}, s_{i-1}) -> (t_i, s_i)` is counted in the bin holding
/// `t_i` when the gap `t_i - t_{i-1}` is at most one bin width; wider gaps
/// are skipped.
pub fn bin_observations(seq: &StateSequence, scheme: TimeBinScheme) -> TransitionCounts {
    let mut counts = TransitionCounts::zeros(scheme);
    let width = scheme.bin_width_seconds();
    for pair in seq.entries.windows(2) {
        let (t0, s0) = pair[0];
        let (t1, s1) = pair[1];
        if t1 - t0 > width {
            continue;
        }
        counts.bins[scheme.bin_of(t1)].record(s0, s1);
    }
    counts
}

/// Bins many sequences in parallel and merges the counts.
pub fn bin_many(sequences: &[StateSequence], scheme: TimeBinScheme) -> TransitionCounts {
    use rayon::prelude::*;
    sequences
        .par_iter()
        .map(|s| bin_observations(s, scheme))
        .reduce(
            || TransitionCounts::zeros(scheme),
            |mut a, b| {
                // schemes are equal by construction
                a.merge(&b).expect("same scheme");
                a
            },
        )
}

/// One row of `A`. Origins without observations carry no probabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionRow {
    /// `(a_pp, a_pm)`
    pub pause: Option<(f64, f64)>,
    /// `(a_mm, a_mp)`
    pub moving: Option<(f64, f64)>,
    pub n_pause: u64,
    pub n_move: u64,
}

impl TransitionRow {
    /// Values in task order `[a_pp, a_pm, a_mm, a_mp]`.
    pub fn values(&self) -> [Option<f64>; 4] {
        [
            self.pause.map(|p| p.0),
            self.pause.map(|p| p.1),
            self.moving.map(|m| m.0),
            self.moving.map(|m| m.1),
        ]
    }

    pub fn missing_pause(&self) -> bool {
        self.pause.is_none()
    }

    pub fn missing_move(&self) -> bool {
        self.moving.is_none()
    }
}

/// Empirical transition probabilities per bin (the matrix `A`).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    scheme: TimeBinScheme,
    rows: Vec<TransitionRow>,
}

impl TransitionDataset {
    pub fn new(scheme: TimeBinScheme, rows: Vec<TransitionRow>) -> Result<Self> {
        if rows.len() != scheme.total_bins() {
            return Err(Error::DimensionError {
                expected: scheme.total_bins(),
                got: rows.len(),
            });
        }
        for (b, row) in rows.iter().enumerate() {
            for v in row.values().into_iter().flatten() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidConfig(format!(
                        "bin {b}: probability {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { scheme, rows })
    }

    pub fn scheme(&self) -> TimeBinScheme {
        self.scheme
    }

    pub fn rows(&self) -> &[TransitionRow] {
        &self.rows
    }

    pub fn row(&self, bin: usize) -> &TransitionRow {
        &self.rows[bin]
    }

    /// Number of bins with at least one observed origin.
    pub fn observed_bins(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.pause.is_some() || r.moving.is_some())
            .count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "bin",
            "a_pp",
            "a_pm",
            "a_mm",
            "a_mp",
            "n_pause",
            "n_move",
            "missing_pause",
            "missing_move",
        ])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (b, row) in self.rows.iter().enumerate() {
            let [pp, pm, mm, mp] = row.values();
            wtr.write_record([
                b.to_string(),
                fmt(pp),
                fmt(pm),
                fmt(mm),
                fmt(mp),
                row.n_pause.to_string(),
                row.n_move.to_string(),
                (row.missing_pause() as u8).to_string(),
                (row.missing_move() as u8).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`TransitionDataset::write_csv`]; the scheme is
    /// inferred from the row count.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                s.trim()
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::InvalidConfig(format!("bad probability {s:?}: {e}")))
            }
        };
        let parse_u = |s: &str| -> Result<u64> {
            s.trim()
                .parse::<u64>()
                .map_err(|e| Error::InvalidConfig(format!("bad count {s:?}: {e}")))
        };
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 9 {
                return Err(Error::InvalidConfig(format!(
                    "expected 9 columns, found {}",
                    rec.len()
                )));
            }
            let pp = parse_opt(&rec[1])?;
            let pm = parse_opt(&rec[2])?;
            let mm = parse_opt(&rec[3])?;
            let mp = parse_opt(&rec[4])?;
            let pause = match (pp, pm, rec[7].trim() == "1") {
                (Some(a), Some(b), false) => Some((a, b)),
                _ => None,
            };
            let moving = match (mm, mp, rec[8].trim() == "1") {
                (Some(a), Some(b), false) => Some((a, b)),
                _ => None,
            };
            rows.push(TransitionRow {
                pause,
                moving,
                n_pause: parse_u(&rec[5])?,
                n_move: parse_u(&rec[6])?,
            });
        }
        let bins_per_hour = (rows.len() / 168) as u32;
        if rows.len() % 168 != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} rows is not a whole weekly grid",
                rows.len()
            )));
        }
        Self::new(TimeBinScheme::new(bins_per_hour)?, rows)
    }
}

/// Per-bin maximum-likelihood transition probabilities. Origins with zero
/// observations are flagged missing.
pub fn estimate_empirical(counts: &TransitionCounts) -> TransitionDataset {
    let rows = counts
        .bins
        .iter()
        .map(|c| {
            let n_pause = c.pause_origin();
            let n_move = c.move_origin();
            let pause = (n_pause > 0).then(|| {
                let a_pm = c.pm as f64 / n_pause as f64;
                (1.0 - a_pm, a_pm)
            });
            let moving = (n_move > 0).then(|| {
                let a_mp = c.mp as f64 / n_move as f64;
                (1.0 - a_mp, a_mp)
            });
            TransitionRow {
                pause,
                moving,
                n_pause,
                n_move,
            }
        })
        .collect();
    TransitionDataset {
        scheme: counts.scheme,
        rows,
    }
}

/// Probability vector over `(pause, move)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    pub p_pause: f64,
    pub p_move: f64,
}

impl StateDistribution {
    pub fn new(p_pause: f64, p_move: f64) -> Result<Self> {
        let valid = (0.0..=1.0).contains(&p_pause)
            && (0.0..=1.0).contains(&p_move)
            && (p_pause + p_move - 1.0).abs() <= 1e-12;
        if !valid {
            return Err(Error::InvalidConfig(format!(
                "({p_pause}, {p_move}) is not a probability vector"
            )));
        }
        Ok(Self { p_pause, p_move })
    }

    pub fn certain(state: MobilityState) -> Self {
        match state {
            MobilityState::Pause => Self { p_pause: 1.0, p_move: 0.0 },
            MobilityState::Move => Self { p_pause: 0.0, p_move: 1.0 },
        }
    }
}

/// 2x2 transition matrix; row 0 is the pause origin `[a_pp, a_pm]`, row 1 the
/// move origin `[a_mp, a_mm]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix(pub [[f64; 2]; 2]);

impl TransitionMatrix {
    pub fn from_switch_probabilities(a_pm: f64, a_mp: f64) -> Self {
        Self([[1.0 - a_pm, a_pm], [a_mp, 1.0 - a_mp]])
    }

    pub fn identity() -> Self {
        Self([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn a_pp(&self) -> f64 {
        self.0[0][0]
    }
    pub fn a_pm(&self) -> f64 {
        self.0[0][1]
    }
    pub fn a_mp(&self) -> f64 {
        self.0[1][0]
    }
    pub fn a_mm(&self) -> f64 {
        self.0[1][1]
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.0.iter().all(|row| {
            row.iter().all(|&v| v >= -tol && v <= 1.0 + tol) && (row[0] + row[1] - 1.0).abs() <= tol
        })
    }

    /// One step of `P(t) = a(t) P(t-1)`.
    pub fn step(&self, p: StateDistribution) -> StateDistribution {
        StateDistribution {
            p_pause: self.a_pp() * p.p_pause + self.a_mp() * p.p_move,
            p_move: self.a_pm() * p.p_pause + self.a_mm() * p.p_move,
        }
    }
}

/// Forward recursion of the state distribution; returns `p0` followed by one
/// distribution per matrix.
pub fn propagate(
    p0: StateDistribution,
    transitions: &[TransitionMatrix],
) -> Result<Vec<StateDistribution>> {
    if let Some((index, m)) = transitions
        .iter()
        .enumerate()
        .find(|(_, m)| !m.is_row_stochastic(1e-9))
    {
        return Err(Error::InvalidTransitionMatrix {
            index,
            detail: format!("{:?}", m.0),
        });
    }
    let mut out = Vec::with_capacity(transitions.len() + 1);
    out.push(p0);
    let mut p = p0;
    for m in transitions {
        p = m.step(p);
        out.push(p);
    }
    Ok(out)
}

/// Row-sum and non-negativity violations over the non-missing bins.
pub fn validate_stochasticity(ds: &TransitionDataset, tol: f64) -> ConstraintReport {
    let start = std::time::Instant::now();
    let pause: Vec<f64> = ds
        .rows
        .iter()
        .filter_map(|r| r.pause.map(|(pp, pm)| (pp + pm - 1.0).abs()))
        .collect();
    let moving: Vec<f64> = ds
        .rows
        .iter()
        .filter_map(|r| r.moving.map(|(mm, mp)| (mm + mp - 1.0).abs()))
        .collect();
    let values: Vec<f64> = ds.rows.iter().flat_map(|r| r.values()).flatten().collect();
    let nonneg: Vec<f64> = values.iter().map(|&v| (-v).max(0.0)).collect();
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    ConstraintReport::new(
        ViolationStats::from_values(&pause, tol),
        ViolationStats::from_values(&moving, tol),
        ViolationStats::from_values(&nonneg, tol),
        if values.is_empty() { 0.0 } else { min_value },
        tol,
        ds.observed_bins(),
        start.elapsed().as_secs_f64() * 1e3,
    )
}
