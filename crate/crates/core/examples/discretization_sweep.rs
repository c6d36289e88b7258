// End-to-end run of the command-line workflow: simulate, fit at 1, 2 and 4
// bins per hour, then evaluate all three models against the truth.
//
// Output goes to `$MOBGP_OUT/sweep` when set, else to the system temp dir.

use std::path::PathBuf;

use mobgp::cli;

const SPEC: &str = r#"{
  "a_pm": {"kind": "sinusoid", "mean": 0.5, "amplitude": 0.3, "period_hours": 24},
  "a_mp": {"kind": "sinusoid", "mean": 0.5, "amplitude": 0.3, "phase_hours": 12, "period_hours": 168}
}"#;

fn step(args: &[&str]) -> Result<(), Box<dyn std::error::Error>> {
    let mut argv = vec!["mobgp"];
    argv.extend_from_slice(args);
    match cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args.join(" ")).into()),
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let root = match std::env::var_os("MOBGP_OUT") {
        Some(dir) => PathBuf::from(dir).join("sweep"),
        None => std::env::temp_dir().join(format!("mobgp-sweep-{}", std::process::id())),
    };
    std::fs::create_dir_all(&root)?;
    let spec = root.join("truth.json");
    std::fs::write(&spec, SPEC)?;
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();

    step(&["simulate", "--spec", &p("truth.json"), "--weeks", "100", "--seed", "5", "--out-dir", &p("sim")])?;
    let mut models = Vec::new();
    for b in ["1", "2", "4"] {
        let dir = p(&format!("b{b}"));
        step(&["fit", "--data", &p("sim/states.csv"), "--bins-per-hour", b, "--iterations", "150", "--out-dir", &dir])?;
        models.push(format!("{dir}/model.json"));
    }
    let mut args = vec!["evaluate", "--truth", &spec.to_str().ok_or("path")?[..], "--out-dir"];
    let eval = p("eval");
    args.push(&eval);
    args.push("--model");
    args.extend(models.iter().map(String::as_str));
    step(&args)?;
    print!("{}", std::fs::read_to_string(root.join("eval/comparison.csv"))?);
    println!("plots and tables in {}", root.join("eval").display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
