// Soft stochasticity constraints: compare an unconstrained fit with the
// penalized fit at increasing constraint densities.

use mobgp::constraints::{
    build_constraint_points, evaluate_constraints, fit_constrained, ConstraintConfig, ConstraintRule,
};
use mobgp::gp::{fit, FitConfig, TrainingSet};
use mobgp::markov::{bin_observations, estimate_empirical, TimeBinScheme};
use mobgp::synth::{simulate_chain, Curve, SimulationConfig, TransitionFunctionSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = TransitionFunctionSpec {
        a_pm: Curve::Sinusoid { mean: 0.3, amplitude: 0.2, phase_hours: 4.0, period_hours: 24.0 },
        a_mp: Curve::Constant { mean: 0.6 },
        epsilon: 1e-3,
    };
    let scheme = TimeBinScheme::hourly();
    let seq = simulate_chain(&spec, &SimulationConfig::new(60, 4, 11))?;
    let data = TrainingSet::from_dataset(&estimate_empirical(&bin_observations(&seq, scheme)));
    let cfg = FitConfig { iterations: 150, ..FitConfig::default() };

    let bins = build_constraint_points(scheme, ConstraintRule::TrainingBins)?;
    let free = fit(&data, &cfg)?;
    let report = evaluate_constraints(&free, &bins)?;
    println!("unconstrained: mean row-sum violation {:.2e}", report.mean_stochasticity_violation());

    let ccfg = ConstraintConfig::default();
    println!("penalty schedule {:?}", ccfg.schedule());
    for m in [168, 336, 672] {
        let points = build_constraint_points(scheme, ConstraintRule::Uniform { count: m })?;
        let out = fit_constrained(&data, &points, &ccfg, &cfg)?;
        let at_bins = evaluate_constraints(&out.model, &bins)?;
        println!(
            "{m:>4} points: nll {:.2}, violation at points {:.2e}, at bins {:.2e}, min mean {:.3}",
            out.final_nll,
            out.report.mean_stochasticity_violation(),
            at_bins.mean_stochasticity_violation(),
            out.report.min_value
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
