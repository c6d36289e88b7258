// Fit the four-task GP to simulated hourly transition estimates, save and
// reload the model, and score the posterior mean against the truth.

use mobgp::gp::{fit_with_trace, load_model, save_model, FitConfig, TrainingSet};
use mobgp::markov::{bin_observations, estimate_empirical, TimeBinScheme, TASK_NAMES};
use mobgp::synth::{simulate_chain, Curve, SimulationConfig, TransitionFunctionSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = TransitionFunctionSpec {
        a_pm: Curve::Sinusoid { mean: 0.5, amplitude: 0.3, phase_hours: 0.0, period_hours: 24.0 },
        a_mp: Curve::Sinusoid { mean: 0.5, amplitude: 0.2, phase_hours: 30.0, period_hours: 168.0 },
        epsilon: 1e-3,
    };
    let scheme = TimeBinScheme::hourly();
    let seq = simulate_chain(&spec, &SimulationConfig::new(100, 4, 3))?;
    let data = TrainingSet::from_dataset(&estimate_empirical(&bin_observations(&seq, scheme)));

    let cfg = FitConfig { iterations: 200, ..FitConfig::default() };
    let out = fit_with_trace(&data, &cfg)?;
    let h = out.model.hyper();
    println!(
        "nll {:.2} -> {:.2} in {} iterations; lengthscale {:.1} h, solver {:?}",
        out.initial_nll,
        out.final_nll,
        out.trajectory.len(),
        h.kernel.lengthscale,
        out.model.solver()
    );
    println!("task covariance:\n{:.3}", out.model.task_covariance());

    let path = std::env::temp_dir().join(format!("mobgp-example-model-{}.json", std::process::id()));
    save_model(&out.model, &path)?;
    let model = load_model(&path)?;
    std::fs::remove_file(&path)?;

    let centers = scheme.bin_centers();
    let preds = model.predict(&centers)?;
    for (l, name) in TASK_NAMES.iter().enumerate() {
        let mse = preds
            .iter()
            .map(|p| (p.mean[l] - spec.tasks_at_hours(p.input)[l]).powi(2))
            .sum::<f64>()
            / preds.len() as f64;
        println!("{name}: rmse vs truth {:.4}", mse.sqrt());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
