//! Ground-truth transition functions over the week and forward simulation of
//! the two-state chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{MobilityState, StateSequence, TransitionMatrix, WEEK_HOURS};

/// Default clamp keeping truth functions away from absorbing values.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Monday 2020-01-06 00:00 UTC; simulated sequences start here.
pub const SIMULATION_START: i64 = 1_578_268_800;

fn default_period() -> f64 {
    WEEK_HOURS
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// A periodic switching probability as a function of week-phase hours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curve {
    Constant {
        mean: f64,
    },
    Sinusoid {
        mean: f64,
        amplitude: f64,
        #[serde(default)]
        phase_hours: f64,
        /// Must divide 168 so the curve repeats every week.
        #[serde(default = "default_period")]
        period_hours: f64,
    },
    /// `[start_hour, value]` pairs; each value holds until the next start and
    /// the last one wraps around to the first.
    Piecewise { schedule: Vec<(f64, f64)> },
}

impl Curve {
    pub fn eval_hours(&self, hours: f64) -> f64 {
        match self {
            Curve::Constant { mean } => *mean,
            Curve::Sinusoid {
                mean,
                amplitude,
                phase_hours,
                period_hours,
            } => {
                let x = 2.0 * std::f64::consts::PI * (hours - phase_hours) / period_hours;
                mean + amplitude * x.sin()
            }
            Curve::Piecewise { schedule } => {
                let h = hours.rem_euclid(WEEK_HOURS);
                schedule
                    .iter()
                    .rev()
                    .find(|(start, _)| *start <= h)
                    .or_else(|| schedule.last())
                    .map(|(_, v)| *v)
                    .unwrap_or(0.0)
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("{name}: {msg}")));
        match self {
            Curve::Constant { mean } if !mean.is_finite() => bad("mean must be finite".into()),
            Curve::Sinusoid {
                mean,
                amplitude,
                phase_hours,
                period_hours,
            } => {
                if ![mean, amplitude, phase_hours, period_hours]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return bad("sinusoid parameters must be finite".into());
                }
                let cycles = WEEK_HOURS / period_hours;
                if *period_hours <= 0.0 || (cycles - cycles.round()).abs() > 1e-9 {
                    return bad(format!("period {period_hours} h does not divide a week"));
                }
                Ok(())
            }
            Curve::Piecewise { schedule } => {
                if schedule.is_empty() {
                    return bad("empty schedule".into());
                }
                if schedule
                    .iter()
                    .any(|(s, v)| !(0.0..WEEK_HOURS).contains(s) || !v.is_finite())
                {
                    return bad("schedule starts must lie in [0, 168)".into());
                }
                if schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return bad("schedule starts must increase".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Ground truth for `a_pm(t)` and `a_mp(t)`; `a_pp` and `a_mm` are their
/// complements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionFunctionSpec {
    pub a_pm: Curve,
    pub a_mp: Curve,
    /// Both curves are clamped to `[epsilon, 1 - epsilon]`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl TransitionFunctionSpec {
    pub fn constant(a_pm: f64, a_mp: f64) -> Self {
        Self {
            a_pm: Curve::Constant { mean: a_pm },
            a_mp: Curve::Constant { mean: a_mp },
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} outside [0, 0.5)",
                self.epsilon
            )));
        }
        self.a_pm.validate("a_pm")?;
        self.a_mp.validate("a_mp")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Transition matrix at `hours` into the week.
    pub fn matrix_at_hours(&self, hours: f64) -> TransitionMatrix {
        let lo = self.epsilon;
        let hi = 1.0 - self.epsilon;
        let a_pm = self.a_pm.eval_hours(hours).clamp(lo, hi);
        let a_mp = self.a_mp.eval_hours(hours).clamp(lo, hi);
        TransitionMatrix::from_switch_probabilities(a_pm, a_mp)
    }

    /// Truth values at `hours` in task order `[a_pp, a_pm, a_mm, a_mp]`.
    pub fn tasks_at_hours(&self, hours: f64) -> [f64; 4] {
        let m = self.matrix_at_hours(hours);
        [m.a_pp(), m.a_pm(), m.a_mm(), m.a_mp()]
    }
}

/// Truth transition matrix at `week_phase` in `[0, 1)`.
pub fn eval_truth(spec: &TransitionFunctionSpec, week_phase: f64) -> TransitionMatrix {
    spec.matrix_at_hours(week_phase * WEEK_HOURS)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub weeks: u32,
    pub steps_per_hour: u32,
    pub seed: u64,
    pub initial_state: MobilityState,
}

impl SimulationConfig {
    pub fn new(weeks: u32, steps_per_hour: u32, seed: u64) -> Self {
        Self {
            weeks,
            steps_per_hour,
            seed,
            initial_state: MobilityState::Pause,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weeks == 0 {
            return Err(Error::InvalidConfig("weeks must be at least 1".into()));
        }
        if self.steps_per_hour == 0 || 1800 % self.steps_per_hour != 0 {
            return Err(Error::InvalidConfig(format!(
                "steps per hour must divide 1800 (got {})",
                self.steps_per_hour
            )));
        }
        Ok(())
    }

    pub fn step_seconds(&self) -> i64 {
        3600 / self.steps_per_hour as i64
    }

    pub fn total_steps(&self) -> usize {
        self.weeks as usize * 168 * self.steps_per_hour as usize
    }
}

/// Samples one chain of `weeks * 168 * steps_per_hour + 1` states.
///
/// Entries sit half a step after each grid tick, so a step's destination lies
/// mid-way through its interval; the transition into entry `k` is drawn from
/// the origin row of the truth matrix at that destination's week phase.
pub fn simulate_chain(spec: &TransitionFunctionSpec, cfg: &SimulationConfig) -> Result<StateSequence> {
    simulate_stream(spec, cfg, 0, "sim-0")
}

/// Simulates `people` independent chains on separate streams of the same seed.
pub fn simulate_population(
    spec: &TransitionFunctionSpec,
    cfg: &SimulationConfig,
    people: usize,
) -> Result<Vec<StateSequence>> {
    (0..people)
        .map(|i| simulate_stream(spec, cfg, i as u64, &format!("sim-{i}")))
        .collect()
}

fn simulate_stream(
    spec: &TransitionFunctionSpec,
    cfg: &SimulationConfig,
    stream: u64,
    person_id: &str,
) -> Result<StateSequence> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let step = cfg.step_seconds();
    let t0 = SIMULATION_START + step / 2;
    let steps = cfg.total_steps();
    let mut entries = Vec::with_capacity(steps + 1);
    let mut state = cfg.initial_state;
    entries.push((t0, state));
    for k in 1..=steps {
        let t = t0 + k as i64 * step;
        let m = spec.matrix_at_hours(crate::markov::week_phase_hours(t));
        let p_switch = match state {
            MobilityState::Pause => m.a_pm(),
            MobilityState::Move => m.a_mp(),
        };
        if rng.gen::<f64>() < p_switch {
            state = match state {
                MobilityState::Pause => MobilityState::Move,
                MobilityState::Move => MobilityState::Pause,
            };
        }
        entries.push((t, state));
    }
    StateSequence::new(person_id, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{bin_observations, estimate_empirical, TimeBinScheme};

    fn sinusoid(mean: f64, amplitude: f64, phase_hours: f64) -> Curve {
        Curve::Sinusoid {
            mean,
            amplitude,
            phase_hours,
            period_hours: 168.0,
        }
    }

    #[test]
    fn constant_truth() {
        let spec = TransitionFunctionSpec::constant(0.6, 0.4);
        for phase in [0.0, 0.3, 0.999] {
            let m = eval_truth(&spec, phase);
            assert_eq!(m.0, [[1.0 - 0.6, 0.6], [0.4, 1.0 - 0.4]]);
        }
    }

    #[test]
    fn sinusoid_zero_crossing_and_peak() {
        let spec = TransitionFunctionSpec {
            a_pm: sinusoid(0.5, 0.3, 10.0),
            a_mp: Curve::Constant { mean: 0.2 },
            epsilon: DEFAULT_EPSILON,
        };
        let at_zero = eval_truth(&spec, 10.0 / 168.0);
        assert!((at_zero.a_pm() - 0.5).abs() < 1e-12);
        // peak a quarter period after the phase offset
        let peak_hours = 10.0 + 42.0;
        let expected = 0.5 + 0.3 * (2.0 * std::f64::consts::PI * 42.0 / 168.0).sin();
        let at_peak = eval_truth(&spec, peak_hours / 168.0);
        assert!((at_peak.a_pm() - expected).abs() < 1e-12);
        assert!((at_peak.a_pm() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clamping_and_row_stochastic() {
        let spec = TransitionFunctionSpec {
            a_pm: sinusoid(0.5, 0.7, 0.0),
            a_mp: Curve::Piecewise {
                schedule: vec![(0.0, -0.2), (80.0, 1.5)],
            },
            epsilon: DEFAULT_EPSILON,
        };
        for i in 0..500 {
            let m = eval_truth(&spec, i as f64 / 500.0);
            assert!(m.is_row_stochastic(0.0));
            for v in [m.a_pm(), m.a_mp()] {
                assert!((DEFAULT_EPSILON..=1.0 - DEFAULT_EPSILON).contains(&v));
            }
        }
    }

    #[test]
    fn piecewise_wraps() {
        let c = Curve::Piecewise {
            schedule: vec![(8.0, 0.3), (20.0, 0.1)],
        };
        assert_eq!(c.eval_hours(2.0), 0.1);
        assert_eq!(c.eval_hours(8.0), 0.3);
        assert_eq!(c.eval_hours(19.9), 0.3);
        assert_eq!(c.eval_hours(167.0), 0.1);
    }

    #[test]
    fn spec_json_forms() {
        let spec = TransitionFunctionSpec::from_json(
            r#"{"a_pm": {"kind": "sinusoid", "mean": 0.5, "amplitude": 0.3, "phase_hours": 6},
                "a_mp": {"kind": "piecewise", "schedule": [[0, 0.2], [12, 0.4]]}}"#,
        )
        .unwrap();
        assert_eq!(spec.epsilon, DEFAULT_EPSILON);
        assert_eq!(spec.a_pm, sinusoid(0.5, 0.3, 6.0));
        assert!(TransitionFunctionSpec::from_json(r#"{"a_pm": {"kind": "nope"}}"#).is_err());
        let bad_period = r#"{"a_pm": {"kind": "sinusoid", "mean": 0.5, "amplitude": 0.1, "period_hours": 50},
                             "a_mp": {"kind": "constant", "mean": 0.5}}"#;
        assert!(TransitionFunctionSpec::from_json(bad_period).is_err());
    }

    #[test]
    fn deterministic_chains() {
        let always = TransitionFunctionSpec::constant(1.0, 1.0).with_epsilon(0.0);
        for seed in [1, 2, 99] {
            let seq = simulate_chain(&always, &SimulationConfig::new(1, 1, seed)).unwrap();
            assert_eq!(seq.len(), 169);
            assert!(seq.entries().windows(2).all(|w| w[0].1 != w[1].1));
        }
        let never = TransitionFunctionSpec::constant(0.0, 0.0).with_epsilon(0.0);
        let seq = simulate_chain(&never, &SimulationConfig::new(2, 2, 5)).unwrap();
        assert_eq!(seq.len(), 2 * 168 * 2 + 1);
        assert!(seq.entries().iter().all(|e| e.1 == MobilityState::Pause));
    }

    #[test]
    fn same_seed_same_sequence() {
        let spec = TransitionFunctionSpec::constant(0.3, 0.2);
        let a = simulate_chain(&spec, &SimulationConfig::new(3, 2, 42)).unwrap();
        let b = simulate_chain(&spec, &SimulationConfig::new(3, 2, 42)).unwrap();
        let c = simulate_chain(&spec, &SimulationConfig::new(3, 2, 43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let pop = simulate_population(&spec, &SimulationConfig::new(1, 1, 42), 2).unwrap();
        let one_week = simulate_chain(&spec, &SimulationConfig::new(1, 1, 42)).unwrap();
        assert_eq!(pop[0], one_week);
        assert_ne!(pop[0].entries(), pop[1].entries());
    }

    #[test]
    fn invalid_configs() {
        let spec = TransitionFunctionSpec::constant(0.3, 0.2);
        assert!(simulate_chain(&spec, &SimulationConfig::new(0, 1, 1)).is_err());
        assert!(simulate_chain(&spec, &SimulationConfig::new(1, 7, 1)).is_err());
    }

    #[test]
    fn long_run_recovers_constant_rate() {
        let spec = TransitionFunctionSpec::constant(0.6, 0.4);
        let seq = simulate_chain(&spec, &SimulationConfig::new(2000, 1, 11)).unwrap();
        let ds = estimate_empirical(&bin_observations(&seq, TimeBinScheme::hourly()));
        let (mut pm, mut n) = (0.0, 0.0);
        for row in ds.rows() {
            let (_, a_pm) = row.pause.unwrap();
            pm += a_pm * row.n_pause as f64;
            n += row.n_pause as f64;
        }
        assert!((pm / n - 0.6).abs() < 0.02);
        // per bin: root-mean-square error inside the 0.03 band, no outlier bins
        let errs: Vec<f64> = ds
            .rows()
            .iter()
            .flat_map(|r| [r.pause.unwrap().1 - 0.6, r.moving.unwrap().1 - 0.4])
            .collect();
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        let worst = errs.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        assert!(rmse < 0.03, "rmse {rmse}");
        assert!(worst < 0.1, "worst per-bin error {worst}");
    }
}
