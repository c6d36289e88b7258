// Simulate a week-periodic move/pause chain, bin it hourly and compare the
// empirical transition probabilities with the truth.

use mobgp::markov::{bin_observations, estimate_empirical, validate_stochasticity, TimeBinScheme};
use mobgp::synth::{simulate_chain, Curve, SimulationConfig, TransitionFunctionSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = TransitionFunctionSpec {
        a_pm: Curve::Sinusoid { mean: 0.4, amplitude: 0.25, phase_hours: 0.0, period_hours: 24.0 },
        a_mp: Curve::Constant { mean: 0.3 },
        epsilon: 1e-3,
    };
    let seq = simulate_chain(&spec, &SimulationConfig::new(100, 4, 7))?;
    let scheme = TimeBinScheme::hourly();
    let counts = bin_observations(&seq, scheme);
    let ds = estimate_empirical(&counts);
    println!("{} states, {} counted transitions, {} observed bins", seq.len(), counts.total(), ds.observed_bins());

    let mut worst: f64 = 0.0;
    let mut sq = 0.0;
    for (b, row) in ds.rows().iter().enumerate() {
        let truth = spec.tasks_at_hours(scheme.bin_center_hours(b));
        let (_, a_pm) = row.pause.ok_or("bin without pause origins")?;
        worst = worst.max((a_pm - truth[1]).abs());
        sq += (a_pm - truth[1]).powi(2);
    }
    println!("a_pm error: rmse {:.4}, worst bin {:.4}", (sq / ds.rows().len() as f64).sqrt(), worst);
    for b in [0, 6, 12, 18] {
        let row = ds.row(b);
        println!("hour {b:>2}: empirical a_pm {:.3}  truth {:.3}", row.pause.unwrap().1, spec.tasks_at_hours(b as f64 + 0.5)[1]);
    }
    let report = validate_stochasticity(&ds, 1e-12);
    println!("max row-sum violation of the estimate: {:e}", report.max_stochasticity_violation());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
