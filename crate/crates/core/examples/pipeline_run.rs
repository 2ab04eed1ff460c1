//! Full pipeline from a TOML string, printing the headline numbers of the report.

use conformal_spectra::pipeline::{execute, RunConfig};

const CONFIG: &str = r#"
surface = "sphere"
level = 2
k = 1
caps = [4.0, 8.0]
budget = 20
seed = 3
"#;

fn main() -> conformal_spectra::Result<()> {
    let cfg = RunConfig::from_toml_str(CONFIG)?;
    let art = execute(&cfg)?;
    let r = &art.report;
    println!("completed {}", r.status.completed);
    for s in &r.stages {
        println!("cap {:>4}: {:.4} pi", s.cap, s.best_over_pi);
    }
    if let Some(f) = &r.final_spectrum {
        println!("lambda_{} = {:.4} pi", r.k, f.lambda_k_over_pi);
    }
    println!("{}", serde_json::to_string_pretty(&r.checks).unwrap());
    Ok(())
}
