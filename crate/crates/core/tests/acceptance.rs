//! Acceptance criteria, one line each. Runs without the libtest harness so the
//! table is always printed; exits nonzero when any criterion fails.
//!
//! `cargo test --test acceptance -- 1 4 9` runs a subset.

use std::process::ExitCode;
use std::sync::OnceLock;

use conformal_spectra::suites::*;

static K1: OnceLock<RunOutcome> = OnceLock::new();
static K1_PAPER: OnceLock<RunOutcome> = OnceLock::new();
static K2: OnceLock<RunOutcome> = OnceLock::new();
static K2_COARSE: OnceLock<Vec<RunOutcome>> = OnceLock::new();
static TORUS: OnceLock<RunOutcome> = OnceLock::new();

fn k1() -> &'static RunOutcome {
    K1.get_or_init(|| run_config(SPHERE_K1, None))
}
fn k1_paper() -> &'static RunOutcome {
    K1_PAPER.get_or_init(|| run_config(SPHERE_K1_PAPER, None))
}
fn k2() -> &'static RunOutcome {
    K2.get_or_init(|| run_config(SPHERE_K2, None))
}
fn k2_coarse() -> &'static [RunOutcome] {
    K2_COARSE.get_or_init(|| [2, 3].iter().map(|&l| run_config(SPHERE_K2, Some(l))).collect())
}
fn torus_k2() -> &'static RunOutcome {
    TORUS.get_or_init(|| run_config(TORUS_K2, None))
}

fn criterion(n: u32) -> CheckLine {
    match n {
        1 => sphere_oracle(),
        2 => torus_oracle(),
        3 => disk_oracle(),
        4 => gradient_check(),
        5 => projection_oracle(),
        6 => monotonicity(&[
            ("sphere k=1", k1()),
            ("sphere k=1 paper", k1_paper()),
            ("sphere k=2", k2()),
            ("torus k=2", torus_k2()),
        ]),
        7 => level_set_trends(&[("sphere k=1", k1()), ("sphere k=2", k2()), ("torus k=2", torus_k2())], k1_paper()),
        8 => k1_sphere(k1()),
        9 => k2_sphere(k2(), k2_coarse()),
        10 => {
            let a = detector_soundness();
            let b = detector_specificity();
            let mut line = a.clone();
            line.name = "bubble detector".into();
            line.pass = a.pass && b.pass;
            line.detail = format!("{}; {}", a.detail, b.detail);
            line.elapsed = a.elapsed + b.elapsed;
            line
        }
        11 => certificate_check(k1()),
        12 => determinism(),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|n| (1..=12).contains(n)).collect();
    let wanted: Vec<u32> = if picked.is_empty() { (1..=12).collect() } else { picked };
    let mut failures = 0;
    for n in wanted {
        let line = criterion(n);
        println!("criterion {n:>2}: {}", line.render());
        failures += (!line.pass) as usize;
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
